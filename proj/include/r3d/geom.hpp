#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "r3d/errors.hpp"
#include "r3d/rng.hpp"

namespace r3d {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }

  Vec3 cwise_mul(const Vec3& o) const { return {x * o.x, y * o.y, z * o.z}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double squared_norm() const { return dot(*this); }
  double norm() const { return std::sqrt(squared_norm()); }

  bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }
  bool operator!=(const Vec3& o) const { return !(*this == o); }

  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

using Point3 = Vec3;

struct PointCloud {
  std::vector<Point3> points;
  std::optional<std::vector<std::uint8_t>> labels;

  std::size_t size() const { return points.size(); }
  bool has_labels() const { return labels.has_value(); }
};

// Row-vector convention: p' = p * R, entry (i, j) at m[3*i + j].
struct RotationMatrix {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  Vec3 apply(const Vec3& p) const {
    return {p.x * m[0] + p.y * m[3] + p.z * m[6],
            p.x * m[1] + p.y * m[4] + p.z * m[7],
            p.x * m[2] + p.y * m[5] + p.z * m[8]};
  }

  RotationMatrix operator*(const RotationMatrix& o) const {
    RotationMatrix r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += m[3 * i + k] * o.m[3 * k + j];
        r.m[3 * i + j] = s;
      }
    return r;
  }
};

inline RotationMatrix rotation_about_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {{1, 0, 0, 0, c, s, 0, -s, c}};
}

inline RotationMatrix rotation_about_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {{c, 0, -s, 0, 1, 0, s, 0, c}};
}

inline RotationMatrix rotation_about_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {{c, s, 0, -s, c, 0, 0, 0, 1}};
}

struct NormalizationTransform {
  Point3 centroid;
  double scale = 1.0;

  Point3 apply(const Point3& p) const { return (p - centroid) / scale; }
  Point3 invert(const Point3& p) const { return p * scale + centroid; }
};

// Centers at the centroid and scales so the largest absolute coordinate is 1.
inline std::pair<PointCloud, NormalizationTransform> normalize_cloud(const PointCloud& pc) {
  if (pc.points.empty()) throw DegenerateCloud("normalize_cloud: empty cloud");
  Vec3 centroid{0, 0, 0};
  for (const auto& p : pc.points) centroid += p;
  centroid = centroid / static_cast<double>(pc.size());

  double extent = 0.0;
  for (const auto& p : pc.points) {
    const Vec3 q = p - centroid;
    extent = std::max({extent, std::fabs(q.x), std::fabs(q.y), std::fabs(q.z)});
  }
  if (extent == 0.0) throw DegenerateCloud("normalize_cloud: all points coincide");

  NormalizationTransform tf{centroid, extent};
  PointCloud out;
  out.points.reserve(pc.size());
  for (const auto& p : pc.points) out.points.push_back(tf.apply(p));
  out.labels = pc.labels;
  return {std::move(out), tf};
}

// Uniform sample of min(n, |pc|) points without replacement (partial
// Fisher-Yates), deterministic per seed. n >= |pc| yields a full shuffle.
inline PointCloud downsample_random(const PointCloud& pc, std::size_t n, std::uint64_t seed) {
  const std::size_t total = pc.size();
  const std::size_t keep = std::min(n, total);
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(total - i));
    std::swap(idx[i], idx[j]);
  }
  PointCloud out;
  out.points.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.points.push_back(pc.points[idx[i]]);
  if (pc.labels) {
    std::vector<std::uint8_t> lab;
    lab.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) lab.push_back((*pc.labels)[idx[i]]);
    out.labels = std::move(lab);
  }
  return out;
}

// X, then Y, then Z axis rotations, each angle uniform in [0, 2pi).
inline RotationMatrix random_rotation(std::uint64_t seed) {
  Rng rng(seed);
  const double two_pi = 2.0 * 3.14159265358979323846;
  const double ax = rng.uniform_range(0.0, two_pi);
  const double ay = rng.uniform_range(0.0, two_pi);
  const double az = rng.uniform_range(0.0, two_pi);
  return rotation_about_x(ax) * rotation_about_y(ay) * rotation_about_z(az);
}

inline PointCloud apply_rotation(const PointCloud& pc, const RotationMatrix& r) {
  PointCloud out;
  out.points.reserve(pc.size());
  for (const auto& p : pc.points) out.points.push_back(r.apply(p));
  out.labels = pc.labels;
  return out;
}

// Indices of the k nearest reference points per query, ascending by distance,
// ties broken by lower reference index. Exhaustive scan.
inline std::vector<std::vector<std::size_t>> knn(const PointCloud& query,
                                                 const PointCloud& reference,
                                                 std::size_t k) {
  if (k > reference.size())
    throw KTooLarge("knn: k exceeds reference size");
  std::vector<std::vector<std::size_t>> result(query.size());
  std::vector<std::pair<double, std::size_t>> dist(reference.size());
  for (std::size_t qi = 0; qi < query.size(); ++qi) {
    const Vec3 q = query.points[qi];
    for (std::size_t ri = 0; ri < reference.size(); ++ri)
      dist[ri] = {(reference.points[ri] - q).squared_norm(), ri};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k),
                      dist.end());
    auto& row = result[qi];
    row.resize(k);
    for (std::size_t j = 0; j < k; ++j) row[j] = dist[j].second;
  }
  return result;
}

inline double nearest_squared_distance(const Vec3& p, const PointCloud& pc) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : pc.points) best = std::min(best, (q - p).squared_norm());
  return best;
}

// Symmetric sum of directional mean squared nearest-neighbor distances.
inline double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  if (a.points.empty() || b.points.empty())
    throw DegenerateCloud("chamfer_distance: empty cloud");
  double ab = 0.0;
  for (const auto& p : a.points) ab += nearest_squared_distance(p, b);
  ab /= static_cast<double>(a.size());
  double ba = 0.0;
  for (const auto& p : b.points) ba += nearest_squared_distance(p, a);
  ba /= static_cast<double>(b.size());
  return ab + ba;
}

// 10*log10(peak^2 / MSE) with peak 2 (coordinate range [-1, 1]); MSE is the
// mean squared per-coordinate error over index-aligned clouds.
inline double psnr(const PointCloud& reference, const PointCloud& candidate) {
  if (reference.size() != candidate.size())
    throw LengthMismatch("psnr: clouds must be index-aligned");
  if (reference.points.empty()) throw LengthMismatch("psnr: empty cloud");
  double sq = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const Vec3 d = reference.points[i] - candidate.points[i];
    sq += d.squared_norm();
  }
  const double mse = sq / (3.0 * static_cast<double>(reference.size()));
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(4.0 / mse);
}

}  // namespace r3d
