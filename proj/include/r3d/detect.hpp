#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "r3d/diffusion.hpp"
#include "r3d/errors.hpp"
#include "r3d/geom.hpp"
#include "r3d/logging.hpp"
#include "r3d/model.hpp"
#include "r3d/parallel.hpp"
#include "r3d/rng.hpp"
#include "r3d/train.hpp"

namespace r3d {

struct AnomalyReport {
  std::string id;
  PointCloud input;  // the normalized, downsampled cloud that was scored
  PointCloud reconstruction;
  std::vector<double> point_scores;
  double object_score = 0.0;
  int label = 0;
};

struct RocCurve {
  std::vector<double> thresholds;
  std::vector<double> tpr;
  std::vector<double> fpr;
  double auroc = 0.5;
};

// Reverse chain: start from seeded Gaussian displacements, walk t = T..1 with
// fresh noise except at the final step, return input + final displacement.
inline PointCloud reconstruct(const PointCloud& pc, const Checkpoint& ckpt,
                              std::uint64_t seed) {
  if (static_cast<int>(pc.size()) != ckpt.n_points)
    throw PointCountMismatch("reconstruct: cloud has " + std::to_string(pc.size()) +
                             " points, checkpoint expects " + std::to_string(ckpt.n_points));
  const NoiseSchedule sched = ckpt.schedule();
  const Mat points = cloud_to_mat(pc);
  const Mat embedding = encode_forward(points, ckpt.params, nullptr);

  Rng rng(seed);
  const auto n = static_cast<Eigen::Index>(pc.size());
  Mat delta(n, 3);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < 3; ++c) delta(r, c) = rng.normal();

  for (int t = sched.t_max; t >= 1; --t) {
    const Mat ctx = make_context(embedding, sched.beta(t));
    const Mat eps_hat = denoise_forward(delta, points, ctx, ckpt.params, nullptr);
    const double alpha = sched.alpha(t);
    const double coef = (1.0 - alpha) / std::sqrt(1.0 - sched.alpha_bar(t));
    delta = (delta - coef * eps_hat) / std::sqrt(alpha);
    if (t > 1) {
      const double sigma = sched.sigma(t);
      for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < 3; ++c) delta(r, c) += sigma * rng.normal();
    }
  }

  PointCloud out;
  out.points.resize(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.points[i] = pc.points[i] + Vec3{delta(r, 0), delta(r, 1), delta(r, 2)};
  }
  out.labels = pc.labels;
  return out;
}

// Point-cluster comparison: the k-NN cluster of input point i (within the
// input) against the k-NN cluster of reconstruction point i (within the
// reconstruction), members paired by distance rank.
inline std::vector<double> point_scores(const PointCloud& input, const PointCloud& recon,
                                        std::size_t k) {
  if (input.size() != recon.size())
    throw LengthMismatch("point_scores: clouds must be index-aligned");
  if (k < 1) throw KTooLarge("point_scores: k must be >= 1");
  if (k > input.size()) throw KTooLarge("point_scores: k exceeds point count");

  const auto in_clusters = knn(input, input, k);
  const auto re_clusters = knn(recon, recon, k);
  std::vector<double> scores(input.size(), 0.0);
  for (std::size_t i = 0; i < input.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const Vec3 d = input.points[in_clusters[i][j]] - recon.points[re_clusters[i][j]];
      sum += d.squared_norm();
    }
    scores[i] = sum / static_cast<double>(k);
  }
  return scores;
}

// Mean of the top ceil(1% N) point scores: a smoothed max that tolerates a
// few noisy points yet still reacts to small defects.
inline double object_score(const std::vector<double>& scores) {
  if (scores.empty()) throw Error("object_score: empty score list");
  const auto top = static_cast<std::size_t>(
      std::ceil(0.01 * static_cast<double>(scores.size())));
  std::vector<double> sorted(scores);
  std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(top),
                    sorted.end(), std::greater<double>());
  double sum = 0.0;
  for (std::size_t i = 0; i < top; ++i) sum += sorted[i];
  return sum / static_cast<double>(top);
}

namespace detail {

struct RankCounts {
  std::uint64_t wins = 0;  // positive strictly above negative
  std::uint64_t ties = 0;
  std::uint64_t n_pos = 0;
  std::uint64_t n_neg = 0;
};

inline RankCounts rank_counts(const std::vector<double>& scores,
                              const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw LengthMismatch("auroc: scores and labels lengths differ");
  if (scores.empty()) throw SingleClass("auroc: empty input");
  RankCounts rc;
  for (int l : labels) (l != 0 ? rc.n_pos : rc.n_neg) += 1;
  if (rc.n_pos == 0 || rc.n_neg == 0)
    throw SingleClass("auroc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  std::uint64_t neg_below = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::uint64_t pos_here = 0, neg_here = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] != 0 ? pos_here : neg_here) += 1;
      ++j;
    }
    rc.wins += pos_here * neg_below;
    rc.ties += pos_here * neg_here;
    neg_below += neg_here;
    i = j;
  }
  return rc;
}

// Rounds the exact rational a/b to the 2^-53 grid, ties to even. Grid values
// are closed under q -> 1 - q, so complementary labelings sum to exactly 1.
inline double quantized_ratio(std::uint64_t a, std::uint64_t b) {
  using u128 = unsigned __int128;
  const u128 num = static_cast<u128>(a) << 53;
  u128 q = num / b;
  const u128 r2 = 2 * (num % b);
  if (r2 > b || (r2 == b && (q & 1)))
    q += 1;
  return std::ldexp(static_cast<double>(static_cast<std::uint64_t>(q)), -53);
}

}  // namespace detail

// Mann-Whitney statistic normalized to [0, 1], ties weighted one half.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const auto rc = detail::rank_counts(scores, labels);
  return detail::quantized_ratio(2 * rc.wins + rc.ties, 2 * rc.n_pos * rc.n_neg);
}

inline RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
  const auto rc = detail::rank_counts(scores, labels);

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  RocCurve curve;
  curve.thresholds.push_back(std::numeric_limits<double>::infinity());
  curve.tpr.push_back(0.0);
  curve.fpr.push_back(0.0);
  std::uint64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] != 0 ? tp : fp) += 1;
      ++j;
    }
    curve.thresholds.push_back(scores[order[i]]);
    curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(rc.n_pos));
    curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(rc.n_neg));
    i = j;
  }
  curve.auroc = detail::quantized_ratio(2 * rc.wins + rc.ties, 2 * rc.n_pos * rc.n_neg);
  return curve;
}

struct LabeledCloud {
  std::string id;
  PointCloud cloud;
  int object_label = 0;
};

// Normalizes, downsamples to the checkpoint's point count, reconstructs and
// scores one cloud. The two seeds keep downsampling and the reverse chain on
// independent deterministic streams.
inline AnomalyReport score_cloud(const LabeledCloud& sample, const Checkpoint& ckpt,
                                 std::size_t k, std::uint64_t downsample_seed,
                                 std::uint64_t recon_seed) {
  auto [normalized, tf] = normalize_cloud(sample.cloud);
  PointCloud ds = downsample_random(normalized, static_cast<std::size_t>(ckpt.n_points),
                                    downsample_seed);
  AnomalyReport report;
  report.id = sample.id;
  report.label = sample.object_label;
  report.reconstruction = reconstruct(ds, ckpt, recon_seed);
  report.point_scores = point_scores(ds, report.reconstruction, k);
  report.object_score = object_score(report.point_scores);
  report.input = std::move(ds);
  return report;
}

struct EvalResult {
  double i_auroc = 0.5;
  double p_auroc = 0.5;
  std::vector<AnomalyReport> reports;
};

// Full testing pass: reconstruct every cloud, score points and objects, then
// compute object-level and pooled point-level AUROC.
inline EvalResult evaluate(const std::vector<LabeledCloud>& test_set, const Checkpoint& ckpt,
                           std::size_t k, std::uint64_t seed, int n_threads = 1) {
  if (test_set.empty()) throw SingleClass("evaluate: empty test set");
  bool any_pos = false, any_neg = false;
  for (const auto& s : test_set) (s.object_label != 0 ? any_pos : any_neg) = true;
  if (!any_pos || !any_neg)
    throw SingleClass("evaluate: test set needs both normal and anomalous clouds");
  for (const auto& s : test_set)
    if (s.object_label != 0 && !s.cloud.has_labels())
      throw MissingPointLabels("evaluate: anomalous cloud '" + s.id +
                               "' lacks per-point labels");

  EvalResult result;
  result.reports.resize(test_set.size());
  parallel_for(test_set.size(), n_threads, [&](std::size_t i) {
    result.reports[i] = score_cloud(test_set[i], ckpt, k,
                                    stream_seed(seed, streams::kDownsample, i),
                                    stream_seed(seed, streams::kRecon, i));
  });

  std::vector<double> object_scores;
  std::vector<int> object_labels;
  std::vector<double> pooled_scores;
  std::vector<int> pooled_labels;
  for (const auto& report : result.reports) {
    object_scores.push_back(report.object_score);
    object_labels.push_back(report.label);
    for (std::size_t i = 0; i < report.point_scores.size(); ++i) {
      pooled_scores.push_back(report.point_scores[i]);
      const bool lab = report.input.has_labels() && (*report.input.labels)[i] != 0;
      pooled_labels.push_back(lab ? 1 : 0);
    }
  }
  if (std::adjacent_find(object_scores.begin(), object_scores.end(),
                         std::not_equal_to<double>()) == object_scores.end())
    log_warn("evaluate: all object scores are identical; AUROC degenerates to 0.5");

  result.i_auroc = auroc(object_scores, object_labels);
  result.p_auroc = auroc(pooled_scores, pooled_labels);
  return result;
}

}  // namespace r3d
