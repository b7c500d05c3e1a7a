#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "r3d/errors.hpp"
#include "r3d/geom.hpp"
#include "r3d/logging.hpp"
#include "r3d/patchgen.hpp"
#include "r3d/rng.hpp"

namespace r3d {

enum class ShapeKind { kSphere, kTorus, kBox, kEllipsoid };

inline const char* to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kTorus: return "torus";
    case ShapeKind::kBox: return "box";
    case ShapeKind::kEllipsoid: return "ellipsoid";
  }
  return "unknown";
}

inline std::optional<ShapeKind> shape_kind_from_string(const std::string& s) {
  if (s == "sphere") return ShapeKind::kSphere;
  if (s == "torus") return ShapeKind::kTorus;
  if (s == "box") return ShapeKind::kBox;
  if (s == "ellipsoid") return ShapeKind::kEllipsoid;
  return std::nullopt;
}

struct SyntheticShapeSpec {
  ShapeKind kind = ShapeKind::kSphere;
  std::size_t n_points = 1024;
  // sphere: a = radius; torus: a = major, b = minor radius;
  // box / ellipsoid: a, b, c are semi-extents per axis
  double a = 1.0;
  double b = 0.3;
  double c = 1.0;
  double jitter_std = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_points < 64) throw InvalidSpec("shape spec: need at least 64 points");
    if (!(a > 0.0) || !(b > 0.0) || !(c > 0.0))
      throw InvalidSpec("shape spec: shape parameters must be positive");
    if (kind == ShapeKind::kTorus && !(b < a))
      throw InvalidSpec("shape spec: torus minor radius must be below the major radius");
    if (jitter_std < 0.0) throw InvalidSpec("shape spec: jitter_std must be >= 0");
  }
};

// Area-weighted uniform surface samples plus optional Gaussian jitter, prior
// to normalization. Rejection loops consume a deterministic draw sequence.
inline PointCloud gen_shape_surface(const SyntheticShapeSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const double two_pi = 2.0 * 3.14159265358979323846;
  PointCloud pc;
  pc.points.reserve(spec.n_points);
  for (std::size_t i = 0; i < spec.n_points; ++i) {
    Vec3 p;
    switch (spec.kind) {
      case ShapeKind::kSphere: {
        const double z = 2.0 * rng.uniform() - 1.0;
        const double phi = two_pi * rng.uniform();
        const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
        p = {spec.a * s * std::cos(phi), spec.a * s * std::sin(phi), spec.a * z};
        break;
      }
      case ShapeKind::kTorus: {
        double theta = 0.0;
        for (;;) {
          theta = two_pi * rng.uniform();
          const double w = rng.uniform() * (spec.a + spec.b);
          if (spec.a + spec.b * std::cos(theta) >= w) break;
        }
        const double phi = two_pi * rng.uniform();
        const double ring = spec.a + spec.b * std::cos(theta);
        p = {ring * std::cos(phi), ring * std::sin(phi), spec.b * std::sin(theta)};
        break;
      }
      case ShapeKind::kBox: {
        const double wx = spec.b * spec.c, wy = spec.a * spec.c, wz = spec.a * spec.b;
        const double pickv = rng.uniform() * 2.0 * (wx + wy + wz);
        const double u = rng.uniform(), v = rng.uniform();
        if (pickv < 2.0 * wx) {
          const double sign = pickv < wx ? 1.0 : -1.0;
          p = {sign * spec.a, (2.0 * u - 1.0) * spec.b, (2.0 * v - 1.0) * spec.c};
        } else if (pickv < 2.0 * wx + 2.0 * wy) {
          const double sign = pickv < 2.0 * wx + wy ? 1.0 : -1.0;
          p = {(2.0 * u - 1.0) * spec.a, sign * spec.b, (2.0 * v - 1.0) * spec.c};
        } else {
          const double sign = pickv < 2.0 * wx + 2.0 * wy + wz ? 1.0 : -1.0;
          p = {(2.0 * u - 1.0) * spec.a, (2.0 * v - 1.0) * spec.b, sign * spec.c};
        }
        break;
      }
      case ShapeKind::kEllipsoid: {
        const double m_max =
            std::max({spec.b * spec.c, spec.a * spec.c, spec.a * spec.b});
        for (;;) {
          const double z = 2.0 * rng.uniform() - 1.0;
          const double phi = two_pi * rng.uniform();
          const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
          const Vec3 dir{s * std::cos(phi), s * std::sin(phi), z};
          const double m = std::sqrt(
              spec.b * spec.b * spec.c * spec.c * dir.x * dir.x +
              spec.a * spec.a * spec.c * spec.c * dir.y * dir.y +
              spec.a * spec.a * spec.b * spec.b * dir.z * dir.z);
          if (rng.uniform() * m_max <= m) {
            p = {spec.a * dir.x, spec.b * dir.y, spec.c * dir.z};
            break;
          }
        }
        break;
      }
    }
    if (spec.jitter_std > 0.0) {
      p.x += spec.jitter_std * rng.normal();
      p.y += spec.jitter_std * rng.normal();
      p.z += spec.jitter_std * rng.normal();
    }
    pc.points.push_back(p);
  }
  return pc;
}

inline PointCloud gen_shape(const SyntheticShapeSpec& spec) {
  return normalize_cloud(gen_shape_surface(spec)).first;
}

namespace detail {

inline std::string format_coord(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void save_ply(const PointCloud& pc, const std::string& path,
                     const std::vector<double>* scores = nullptr) {
  if (pc.points.empty()) throw IoError("save_ply: refusing to write an empty cloud");
  if (pc.labels && pc.labels->size() != pc.size())
    throw LengthMismatch("save_ply: label count differs from point count");
  if (scores && scores->size() != pc.size())
    throw LengthMismatch("save_ply: score count differs from point count");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("save_ply: cannot open for writing: " + path);

  os << "ply\nformat ascii 1.0\nelement vertex " << pc.size()
     << "\nproperty double x\nproperty double y\nproperty double z\n";
  if (pc.labels) os << "property uchar label\n";
  double lo = 0.0, hi = 0.0;
  if (scores) {
    os << "property double anomaly_score\nproperty double anomaly_score_norm\n";
    lo = *std::min_element(scores->begin(), scores->end());
    hi = *std::max_element(scores->begin(), scores->end());
  }
  os << "end_header\n";

  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Vec3& p = pc.points[i];
    os << detail::format_coord(p.x) << ' ' << detail::format_coord(p.y) << ' '
       << detail::format_coord(p.z);
    if (pc.labels) os << ' ' << static_cast<int>((*pc.labels)[i]);
    if (scores) {
      const double s = (*scores)[i];
      const double norm = hi > lo ? (s - lo) / (hi - lo) : 0.0;
      os << ' ' << detail::format_coord(s) << ' ' << detail::format_coord(norm);
    }
    os << '\n';
  }
  os.flush();
  if (!os) throw IoError("save_ply: write failed: " + path);
}

struct PlyContents {
  PointCloud cloud;
  std::optional<std::vector<double>> scores;
};

inline PlyContents load_ply_full(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_ply: cannot open: " + path);

  auto fail = [&path](std::size_t line_no, const std::string& what) -> void {
    throw ParseError("load_ply: " + path + ":" + std::to_string(line_no) + ": " + what);
  };

  std::size_t line_no = 0;
  std::string line;
  auto next_line = [&]() -> bool {
    if (!std::getline(is, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next_line() || line != "ply") fail(1, "missing 'ply' magic");

  struct Property {
    std::string name;
  };
  std::vector<Property> vertex_props;
  std::size_t vertex_count = 0;
  bool saw_format = false, saw_vertex = false, in_vertex = false, header_done = false;
  while (next_line()) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment" || tok.empty()) continue;
    if (tok == "format") {
      std::string kind;
      ls >> kind;
      if (kind != "ascii") throw UnsupportedFormat("load_ply: only ascii format supported: " + path);
      saw_format = true;
    } else if (tok == "element") {
      std::string name;
      std::size_t count = 0;
      if (!(ls >> name >> count)) fail(line_no, "malformed element line");
      in_vertex = name == "vertex";
      if (in_vertex) {
        vertex_count = count;
        saw_vertex = true;
      }
    } else if (tok == "property") {
      if (!in_vertex) continue;
      std::string type, name;
      if (!(ls >> type)) fail(line_no, "malformed property line");
      if (type == "list")
        throw UnsupportedFormat("load_ply: list properties unsupported: " + path);
      if (!(ls >> name)) fail(line_no, "property missing name");
      vertex_props.push_back({name});
    } else if (tok == "end_header") {
      header_done = true;
      break;
    } else {
      fail(line_no, "unknown header token '" + tok + "'");
    }
  }
  if (!header_done) fail(line_no, "missing end_header");
  if (!saw_format) fail(line_no, "missing format line");
  if (!saw_vertex) fail(line_no, "no vertex element declared");

  int ix = -1, iy = -1, iz = -1, ilabel = -1, iscore = -1;
  for (std::size_t i = 0; i < vertex_props.size(); ++i) {
    const auto& name = vertex_props[i].name;
    const int idx = static_cast<int>(i);
    if (name == "x") ix = idx;
    else if (name == "y") iy = idx;
    else if (name == "z") iz = idx;
    else if (name == "label") ilabel = idx;
    else if (name == "anomaly_score") iscore = idx;
  }
  if (ix < 0 || iy < 0 || iz < 0) fail(line_no, "vertex element lacks x/y/z properties");

  PlyContents out;
  out.cloud.points.reserve(vertex_count);
  std::vector<std::uint8_t> labels;
  std::vector<double> scores;
  std::vector<double> row(vertex_props.size(), 0.0);
  for (std::size_t v = 0; v < vertex_count; ++v) {
    if (!next_line()) fail(line_no + 1, "unexpected end of file; vertex data incomplete");
    const char* cursor = line.c_str();
    for (std::size_t piece = 0; piece < vertex_props.size(); ++piece) {
      char* end = nullptr;
      const double value = std::strtod(cursor, &end);
      if (end == cursor) fail(line_no, "expected " + std::to_string(vertex_props.size()) +
                                           " numeric fields");
      row[piece] = value;
      cursor = end;
    }
    out.cloud.points.push_back({row[static_cast<std::size_t>(ix)],
                                row[static_cast<std::size_t>(iy)],
                                row[static_cast<std::size_t>(iz)]});
    if (ilabel >= 0)
      labels.push_back(row[static_cast<std::size_t>(ilabel)] != 0.0 ? 1 : 0);
    if (iscore >= 0) scores.push_back(row[static_cast<std::size_t>(iscore)]);
  }
  if (ilabel >= 0) out.cloud.labels = std::move(labels);
  if (iscore >= 0) out.scores = std::move(scores);
  return out;
}

inline PointCloud load_ply(const std::string& path) { return load_ply_full(path).cloud; }

struct TestEntry {
  std::string path;
  int object_label = 0;
  bool has_point_labels = false;
};

struct DatasetManifest {
  std::string class_name;
  std::string root;  // directory the paths are relative to
  std::vector<std::string> train;
  std::vector<TestEntry> test;
};

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("manifest: cannot open for writing: " + path);
  os << "path\tsplit\tobject_label\thas_point_labels\n";
  for (const auto& p : m.train) os << p << "\ttrain\t0\t0\n";
  for (const auto& t : m.test)
    os << t.path << "\ttest\t" << t.object_label << '\t' << (t.has_point_labels ? 1 : 0)
       << '\n';
  if (!os) throw IoError("manifest: write failed: " + path);
}

// Loads and validates a manifest; every referenced file must exist already
// so problems surface before any computation starts.
inline DatasetManifest load_manifest(const std::string& path) {
  namespace fs = std::filesystem;
  std::ifstream is(path);
  if (!is) throw IoError("manifest: cannot open: " + path);
  const fs::path dir = fs::path(path).parent_path();

  DatasetManifest m;
  m.root = dir.string();
  m.class_name = dir.filename().string();

  std::string line;
  if (!std::getline(is, line)) throw ParseError("manifest: empty file: " + path);
  std::size_t line_no = 1;
  std::vector<std::string> missing;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string rel, split;
    int label = 0, has_point_labels = 0;
    if (!(ls >> rel >> split >> label >> has_point_labels))
      throw ParseError("manifest: " + path + ":" + std::to_string(line_no) +
                       ": malformed row");
    if (label != 0 && label != 1)
      throw ParseError("manifest: " + path + ":" + std::to_string(line_no) +
                       ": object_label must be 0 or 1");
    const fs::path full = dir / rel;
    if (!fs::exists(full)) missing.push_back(full.string());
    if (split == "train") {
      m.train.push_back(full.string());
    } else if (split == "test") {
      m.test.push_back({full.string(), label, has_point_labels != 0});
    } else {
      throw ParseError("manifest: " + path + ":" + std::to_string(line_no) +
                       ": unknown split '" + split + "'");
    }
  }
  if (m.train.empty()) throw ParseError("manifest: no train entries in " + path);
  if (!missing.empty()) {
    std::string all;
    for (const auto& p : missing) all += "\n  " + p;
    throw IoError("manifest: missing files referenced by " + path + all);
  }
  return m;
}

namespace data_streams {
inline constexpr std::uint64_t kTestDefect = 0x7465737464656674ULL;
}

// Writes <root>/<class>/{train,test}/*.ply plus manifest.tsv. Test normals
// get a random pose so pose alone cannot separate the classes; test defects
// come from a seed stream disjoint from training augmentation.
inline DatasetManifest build_synthetic_dataset(const std::string& root,
                                               const std::string& class_name,
                                               const SyntheticShapeSpec& base_spec,
                                               std::size_t n_train,
                                               std::size_t n_test_normal,
                                               std::size_t n_test_anomalous,
                                               const PatchGenConfig& pg_base,
                                               std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (n_train < 1 || n_test_normal < 1 || n_test_anomalous < 1)
    throw InvalidSpec("build_synthetic_dataset: all split counts must be >= 1");
  base_spec.validate();

  const fs::path class_dir = fs::path(root) / class_name;
  std::error_code ec;
  fs::create_directories(class_dir / "train", ec);
  fs::create_directories(class_dir / "test", ec);
  if (ec) throw IoError("build_synthetic_dataset: cannot create " + class_dir.string());

  DatasetManifest manifest;
  manifest.class_name = class_name;
  manifest.root = class_dir.string();

  char name[160];
  std::size_t file_index = 0;
  for (std::size_t i = 0; i < n_train; ++i, ++file_index) {
    SyntheticShapeSpec spec = base_spec;
    spec.seed = stream_seed(seed, streams::kShape, file_index);
    std::snprintf(name, sizeof(name), "train/%s_train_%03zu.ply", class_name.c_str(), i);
    save_ply(gen_shape(spec), (class_dir / name).string());
    manifest.train.push_back((class_dir / name).string());
  }
  for (std::size_t i = 0; i < n_test_normal; ++i, ++file_index) {
    SyntheticShapeSpec spec = base_spec;
    spec.seed = stream_seed(seed, streams::kShape, file_index);
    const PointCloud pc = apply_rotation(
        gen_shape(spec), random_rotation(stream_seed(seed, streams::kRotate, file_index)));
    std::snprintf(name, sizeof(name), "test/%s_good_%03zu.ply", class_name.c_str(), i);
    save_ply(pc, (class_dir / name).string());
    manifest.test.push_back({(class_dir / name).string(), 0, false});
  }
  for (std::size_t i = 0; i < n_test_anomalous; ++i, ++file_index) {
    SyntheticShapeSpec spec = base_spec;
    spec.seed = stream_seed(seed, streams::kShape, file_index);
    PatchGenConfig pg = pg_base;
    pg.seed = stream_seed(seed, data_streams::kTestDefect, i);
    const AugmentedSample sample = patch_gen(gen_shape(spec), pg);
    std::snprintf(name, sizeof(name), "test/%s_anom_%03zu.ply", class_name.c_str(), i);
    save_ply(sample.anomalous, (class_dir / name).string());
    manifest.test.push_back({(class_dir / name).string(), 1, true});
  }

  // manifest rows are written relative to the class directory
  DatasetManifest rel = manifest;
  auto relativize = [&class_dir](const std::string& p) {
    return fs::relative(p, class_dir).string();
  };
  for (auto& p : rel.train) p = relativize(p);
  for (auto& t : rel.test) t.path = relativize(t.path);
  save_manifest(rel, (class_dir / "manifest.tsv").string());
  return manifest;
}

}  // namespace r3d
