#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "r3d/errors.hpp"
#include "r3d/geom.hpp"
#include "r3d/rng.hpp"

namespace r3d {

enum class DefectKind { kBulge, kSink, kDamage };

inline const char* to_string(DefectKind kind) {
  switch (kind) {
    case DefectKind::kBulge: return "bulge";
    case DefectKind::kSink: return "sink";
    case DefectKind::kDamage: return "damage";
  }
  return "unknown";
}

inline std::optional<DefectKind> defect_kind_from_string(const std::string& s) {
  if (s == "bulge") return DefectKind::kBulge;
  if (s == "sink") return DefectKind::kSink;
  if (s == "damage") return DefectKind::kDamage;
  return std::nullopt;
}

struct PatchGenConfig {
  double selection_ratio = 1.0 / 32.0;
  double scale_s = 0.1;
  std::optional<DefectKind> kind;  // empty: drawn uniformly per sample
  bool rotate = true;
  std::uint64_t seed = 0;
};

struct AugmentedSample {
  PointCloud anomalous;
  PointCloud target;
  std::vector<bool> defect_mask;
  std::vector<Vec3> gt_displacement;  // target - anomalous, zero off the patch
  DefectKind kind = DefectKind::kBulge;
  Point3 viewpoint;
};

namespace patch_streams {
inline constexpr std::uint64_t kKind = 0x6b696e6464726177ULL;
inline constexpr std::uint64_t kViewpoint = 0x76696577706f696eULL;
inline constexpr std::uint64_t kTranslation = 0x7472616e736c6174ULL;
}  // namespace patch_streams

// Uniform point on the surface of the cube [-1,1]^3: one of six faces, then
// an open-interval offset so exactly one coordinate sits at +-1.
inline Point3 sample_viewpoint(std::uint64_t seed) {
  Rng rng(seed);
  const auto face = rng.uniform_index(6);
  const double u = 2.0 * rng.uniform_open() - 1.0;
  const double v = 2.0 * rng.uniform_open() - 1.0;
  switch (face) {
    case 0: return {1.0, u, v};
    case 1: return {-1.0, u, v};
    case 2: return {u, 1.0, v};
    case 3: return {u, -1.0, v};
    case 4: return {u, v, 1.0};
    default: return {u, v, -1.0};
  }
}

// n Gaussian rows shaped by defect kind. Row order follows the patch's
// distance rank from the viewpoint: for bulge/sink the magnitudes taper
// outward (largest row norm first); damage keeps the raw draws.
inline std::vector<Vec3> make_translation(DefectKind kind, std::size_t n,
                                          std::uint64_t seed) {
  if (n < 1) throw Error("make_translation: n must be >= 1");
  Rng rng(seed);
  std::vector<Vec3> rows(n);
  for (auto& r : rows) {
    r.x = rng.normal();
    r.y = rng.normal();
    r.z = rng.normal();
  }
  if (kind == DefectKind::kDamage) return rows;
  for (auto& r : rows) r = {std::fabs(r.x), std::fabs(r.y), std::fabs(r.z)};
  std::stable_sort(rows.begin(), rows.end(), [](const Vec3& a, const Vec3& b) {
    return a.squared_norm() > b.squared_norm();
  });
  if (kind == DefectKind::kSink)
    for (auto& r : rows) r = r * -1.0;
  return rows;
}

// Deforms the ceil(ratio * N) points nearest a random cube-surface viewpoint
// by scale_s * normalize(viewpoint - point) (.) T, leaving every other point
// untouched. Optional random rotation is pose augmentation shared by the
// anomalous and target clouds, so gt_displacement encodes defect removal only.
inline AugmentedSample patch_gen(const PointCloud& pc, const PatchGenConfig& cfg) {
  if (pc.points.empty()) throw DegenerateCloud("patch_gen: empty cloud");
  if (!(cfg.selection_ratio > 0.0) || cfg.selection_ratio > 1.0)
    throw Error("patch_gen: selection_ratio must lie in (0, 1]");
  if (cfg.scale_s < 0.0) throw Error("patch_gen: scale_s must be >= 0");

  const auto n = static_cast<std::size_t>(
      std::ceil(cfg.selection_ratio * static_cast<double>(pc.size())));
  if (n > pc.size()) throw SelectionTooLarge("patch_gen: patch exceeds cloud size");

  DefectKind kind;
  if (cfg.kind) {
    kind = *cfg.kind;
  } else {
    Rng kind_rng(stream_seed(cfg.seed, patch_streams::kKind));
    kind = static_cast<DefectKind>(kind_rng.uniform_index(3));
  }

  AugmentedSample sample;
  sample.kind = kind;
  sample.target = cfg.rotate
                      ? apply_rotation(pc, random_rotation(stream_seed(cfg.seed, streams::kRotate)))
                      : pc;
  sample.viewpoint = sample_viewpoint(stream_seed(cfg.seed, patch_streams::kViewpoint));

  PointCloud vp_query;
  vp_query.points.push_back(sample.viewpoint);
  const auto patch = knn(vp_query, sample.target, n)[0];

  const auto t_rows = make_translation(kind, n, stream_seed(cfg.seed, patch_streams::kTranslation));

  sample.anomalous = sample.target;
  sample.defect_mask.assign(pc.size(), false);
  sample.gt_displacement.assign(pc.size(), Vec3{});
  for (std::size_t rank = 0; rank < n; ++rank) {
    const std::size_t i = patch[rank];
    const Vec3 ray = sample.viewpoint - sample.target.points[i];
    const double len = ray.norm();
    if (len == 0.0)
      throw DegenerateCloud("patch_gen: selected point coincides with viewpoint");
    const Vec3 disp = cfg.scale_s * (ray / len).cwise_mul(t_rows[rank]);
    sample.anomalous.points[i] = sample.target.points[i] + disp;
    sample.defect_mask[i] = true;
    sample.gt_displacement[i] = disp * -1.0;
    // Snap the stored target so anomalous + gt_displacement == target holds
    // bitwise; the adjustment is below one ulp of the true coordinate.
    sample.target.points[i] = sample.anomalous.points[i] + sample.gt_displacement[i];
  }

  std::vector<std::uint8_t> labels(pc.size(), 0);
  for (std::size_t i = 0; i < pc.size(); ++i) labels[i] = sample.defect_mask[i] ? 1 : 0;
  sample.anomalous.labels = std::move(labels);
  return sample;
}

}  // namespace r3d
