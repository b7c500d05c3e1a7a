#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "r3d/r3d.hpp"
#include "test_util.hpp"

using r3d::Checkpoint;
using r3d::LabeledCloud;
using r3d::PointCloud;
using r3d::Vec3;
using r3d::WidthConfig;

namespace {

WidthConfig tiny_widths() {
  WidthConfig w;
  w.encoder_hidden = {8};
  w.embedding_dim = 6;
  w.denoiser_hidden = {8};
  return w;
}

// Zero parameters and a short, fully-masking schedule keep the reverse chain
// cheap and its per-step arithmetic predictable.
Checkpoint zero_checkpoint(int n_points) {
  Checkpoint ckpt;
  ckpt.widths = tiny_widths();
  ckpt.params = r3d::make_shaped(ckpt.widths);
  ckpt.t_max = 5;
  ckpt.beta_start = 0.2;
  ckpt.beta_end = 0.9;
  ckpt.n_points = n_points;
  return ckpt;
}

PointCloud sphere_cloud(std::size_t n, std::uint64_t seed) {
  r3d::Rng rng(seed);
  PointCloud pc;
  pc.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    pc.points.push_back(v / v.norm());
  }
  return pc;
}

double auroc_pairwise_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::uint64_t wins = 0, ties = 0, n_pos = 0, n_neg = 0;
  for (int l : labels) (l != 0 ? n_pos : n_neg) += 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 0) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j])
        ++wins;
      else if (scores[i] == scores[j])
        ++ties;
    }
  }
  return r3d::detail::quantized_ratio(2 * wins + ties, 2 * n_pos * n_neg);
}

std::vector<LabeledCloud> defect_test_set(std::size_t normals, std::size_t anomalies) {
  std::vector<LabeledCloud> set;
  for (std::size_t i = 0; i < normals; ++i) {
    LabeledCloud lc;
    lc.id = "good_" + std::to_string(i);
    lc.cloud = sphere_cloud(96, 500 + i);
    lc.object_label = 0;
    set.push_back(std::move(lc));
  }
  for (std::size_t i = 0; i < anomalies; ++i) {
    r3d::PatchGenConfig pg;
    pg.scale_s = 0.5;
    pg.seed = 900 + i;
    const auto sample = r3d::patch_gen(sphere_cloud(96, 700 + i), pg);
    LabeledCloud lc;
    lc.id = "anom_" + std::to_string(i);
    lc.cloud = sample.anomalous;
    lc.object_label = 1;
    set.push_back(std::move(lc));
  }
  return set;
}

}  // namespace

TEST_CASE("reconstruct requires the checkpoint's point count") {
  const Checkpoint ckpt = zero_checkpoint(64);
  CHECK_THROWS_AS(r3d::reconstruct(sphere_cloud(65, 1), ckpt, 2), r3d::PointCountMismatch);
}

TEST_CASE("reconstruct is deterministic per seed and varies across seeds") {
  const Checkpoint ckpt = zero_checkpoint(64);
  const PointCloud pc = sphere_cloud(64, 2);
  const PointCloud a = r3d::reconstruct(pc, ckpt, 10);
  const PointCloud b = r3d::reconstruct(pc, ckpt, 10);
  const PointCloud c = r3d::reconstruct(pc, ckpt, 11);
  REQUIRE(a.size() == pc.size());
  bool same = true, diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same = same && a.points[i] == b.points[i];
    diff = diff || a.points[i] != c.points[i];
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("reconstruct carries input labels through") {
  const Checkpoint ckpt = zero_checkpoint(64);
  PointCloud pc = sphere_cloud(64, 3);
  std::vector<std::uint8_t> labels(64, 0);
  labels[5] = 1;
  pc.labels = labels;
  const PointCloud out = r3d::reconstruct(pc, ckpt, 4);
  REQUIRE(out.has_labels());
  CHECK(*out.labels == labels);
}

TEST_CASE("reconstruct equals a replayed posterior_step chain") {
  const Checkpoint ckpt = zero_checkpoint(32);
  const auto sched = ckpt.schedule();
  const PointCloud pc = sphere_cloud(32, 5);
  const std::uint64_t seed = 77;

  // Replay the documented noise stream: initial field row-major from the
  // seed, fresh noise drawn after each update except at the last step. The
  // zero model predicts the current field itself, so feed that to the public
  // single-step operation.
  r3d::Rng rng(seed);
  r3d::DisplacementField delta(pc.size());
  for (auto& d : delta) d = {rng.normal(), rng.normal(), rng.normal()};
  const r3d::DisplacementField zero(pc.size(), Vec3{});
  for (int t = sched.t_max; t >= 1; --t) {
    const auto eps_hat = delta;
    delta = r3d::posterior_step(delta, eps_hat, t, zero, sched);
    if (t > 1) {
      const double sig = sched.sigma(t);
      for (auto& d : delta) {
        d.x += sig * rng.normal();
        d.y += sig * rng.normal();
        d.z += sig * rng.normal();
      }
    }
  }

  const PointCloud out = r3d::reconstruct(pc, ckpt, seed);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Vec3 expect = pc.points[i] + delta[i];
    CHECK(out.points[i].x == Catch::Approx(expect.x).margin(1e-12));
    CHECK(out.points[i].y == Catch::Approx(expect.y).margin(1e-12));
    CHECK(out.points[i].z == Catch::Approx(expect.z).margin(1e-12));
  }
}

TEST_CASE("point_scores vanish when input and reconstruction coincide") {
  const PointCloud pc = sphere_cloud(50, 8);
  const auto scores = r3d::point_scores(pc, pc, 4);
  REQUIRE(scores.size() == pc.size());
  for (double s : scores) CHECK(s == 0.0);
}

TEST_CASE("point_scores with k = 1 measures the per-index displacement") {
  const PointCloud pc = sphere_cloud(40, 9);
  PointCloud moved = pc;
  r3d::Rng rng(10);
  for (auto& p : moved.points) {
    p.x += 1e-3 * rng.normal();
    p.y += 1e-3 * rng.normal();
    p.z += 1e-3 * rng.normal();
  }
  const auto scores = r3d::point_scores(pc, moved, 1);
  for (std::size_t i = 0; i < pc.size(); ++i)
    CHECK(scores[i] == (pc.points[i] - moved.points[i]).squared_norm());
}

TEST_CASE("point_scores flag a grossly displaced point") {
  const PointCloud pc = sphere_cloud(128, 11);
  PointCloud moved = pc;
  const std::size_t idx = 17;
  moved.points[idx] += Vec3{0.6, 0.0, 0.0};
  const auto scores = r3d::point_scores(pc, moved, 4);
  const auto max_at = static_cast<std::size_t>(
      std::max_element(scores.begin(), scores.end()) - scores.begin());
  CHECK(max_at == idx);
}

TEST_CASE("point_scores rank eight displaced points above the rest") {
  // The displacement must dwarf the k-neighbourhood diameter, otherwise a
  // clean point that lost a displaced neighbour can outscore a defect whose
  // remaining cluster pairs line up.
  const PointCloud pc = sphere_cloud(256, 14);
  PointCloud moved = pc;
  std::vector<std::size_t> displaced = {3, 40, 77, 110, 150, 180, 210, 250};
  r3d::Rng rng(15);
  for (std::size_t i : displaced) {
    Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
    moved.points[i] += 3.0 * (dir / dir.norm());
  }
  const auto scores = r3d::point_scores(moved, pc, 8);

  std::vector<std::size_t> order(pc.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> top(order.begin(), order.begin() + displaced.size());
  std::sort(top.begin(), top.end());
  CHECK(top == displaced);
}

TEST_CASE("point_scores validate their inputs") {
  const PointCloud pc = sphere_cloud(16, 12);
  const PointCloud other = sphere_cloud(17, 13);
  CHECK_THROWS_AS(r3d::point_scores(pc, other, 2), r3d::LengthMismatch);
  CHECK_THROWS_AS(r3d::point_scores(pc, pc, 0), r3d::KTooLarge);
  CHECK_THROWS_AS(r3d::point_scores(pc, pc, 17), r3d::KTooLarge);
}

TEST_CASE("object_score averages the top one percent") {
  CHECK(r3d::object_score({0.4}) == 0.4);

  std::vector<double> scores(100, 0.1);
  scores[40] = 2.0;
  CHECK(r3d::object_score(scores) == 2.0);  // ceil(1) = 1 -> the max

  std::vector<double> many(250, 0.0);
  many[10] = 5.0;
  many[20] = 7.0;
  many[30] = 9.0;
  CHECK(r3d::object_score(many) == (5.0 + 7.0 + 9.0) / 3.0);  // ceil(2.5) = 3

  CHECK_THROWS_AS(r3d::object_score({}), r3d::Error);
}

TEST_CASE("auroc separates or degenerates exactly on canonical inputs") {
  CHECK(r3d::auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  CHECK(r3d::auroc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
  CHECK(r3d::auroc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
}

TEST_CASE("auroc rejects degenerate inputs") {
  CHECK_THROWS_AS(r3d::auroc({}, {}), r3d::SingleClass);
  CHECK_THROWS_AS(r3d::auroc({0.1, 0.2}, {1, 1}), r3d::SingleClass);
  CHECK_THROWS_AS(r3d::auroc({0.1, 0.2}, {0, 0}), r3d::SingleClass);
  CHECK_THROWS_AS(r3d::auroc({0.1}, {0, 1}), r3d::LengthMismatch);
}

TEST_CASE("auroc matches the pairwise-count oracle on tie-heavy instances") {
  r3d::Rng rng(21);
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = 20 + rng.uniform_index(280);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    // Few distinct score values force many ties across both classes.
    const std::uint64_t levels = 2 + rng.uniform_index(5);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.uniform_index(levels));
      labels[i] = rng.uniform() < 0.4 ? 1 : 0;
    }
    labels[0] = 0;
    labels[1] = 1;
    CHECK(r3d::auroc(scores, labels) == auroc_pairwise_oracle(scores, labels));
  }
}

TEST_CASE("auroc complementary labelings sum to exactly one") {
  r3d::Rng rng(31);
  for (int inst = 0; inst < 10; ++inst) {
    const std::size_t n = 10 + rng.uniform_index(100);
    std::vector<double> scores(n);
    std::vector<int> labels(n), flipped(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.uniform_index(4));
      labels[i] = rng.uniform() < 0.5 ? 1 : 0;
    }
    labels[0] = 0;
    labels[1] = 1;
    for (std::size_t i = 0; i < n; ++i) flipped[i] = 1 - labels[i];
    CHECK(r3d::auroc(scores, labels) + r3d::auroc(scores, flipped) == 1.0);
  }
}

TEST_CASE("auroc is invariant under an order-preserving score map") {
  std::vector<double> scores = {0, 3, 1, 1, 2, 0, 4, 2, 3, 1};
  std::vector<int> labels = {0, 1, 0, 1, 1, 0, 1, 0, 0, 1};
  std::vector<double> mapped(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) mapped[i] = 2.0 * scores[i] + 3.0;
  CHECK(r3d::auroc(scores, labels) == r3d::auroc(mapped, labels));
}

TEST_CASE("quantized_ratio rounds to the dyadic grid with exact complements") {
  CHECK(r3d::detail::quantized_ratio(1, 2) == 0.5);
  CHECK(r3d::detail::quantized_ratio(0, 7) == 0.0);
  CHECK(r3d::detail::quantized_ratio(7, 7) == 1.0);
  CHECK(r3d::detail::quantized_ratio(1, 3) + r3d::detail::quantized_ratio(2, 3) == 1.0);
  CHECK(r3d::detail::quantized_ratio(1, 7) + r3d::detail::quantized_ratio(6, 7) == 1.0);
}

TEST_CASE("roc_curve is monotone and integrates to the auroc value") {
  r3d::Rng rng(41);
  const std::size_t n = 200;
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = static_cast<double>(rng.uniform_index(6));
    labels[i] = rng.uniform() < 0.5 ? 1 : 0;
  }
  labels[0] = 0;
  labels[1] = 1;

  const auto curve = r3d::roc_curve(scores, labels);
  REQUIRE(curve.tpr.size() == curve.fpr.size());
  REQUIRE(curve.tpr.size() == curve.thresholds.size());
  CHECK(curve.tpr.front() == 0.0);
  CHECK(curve.fpr.front() == 0.0);
  CHECK(curve.tpr.back() == 1.0);
  CHECK(curve.fpr.back() == 1.0);
  for (std::size_t i = 1; i < curve.tpr.size(); ++i) {
    CHECK(curve.tpr[i] >= curve.tpr[i - 1]);
    CHECK(curve.fpr[i] >= curve.fpr[i - 1]);
    CHECK(curve.thresholds[i] < curve.thresholds[i - 1]);
  }

  double trapezoid = 0.0;
  for (std::size_t i = 1; i < curve.tpr.size(); ++i)
    trapezoid +=
        (curve.fpr[i] - curve.fpr[i - 1]) * (curve.tpr[i] + curve.tpr[i - 1]) / 2.0;
  CHECK(curve.auroc == r3d::auroc(scores, labels));
  CHECK(trapezoid == Catch::Approx(curve.auroc).margin(1e-12));
}

TEST_CASE("score_cloud normalizes and downsamples to the checkpoint size") {
  const Checkpoint ckpt = zero_checkpoint(48);
  LabeledCloud lc;
  lc.id = "sample";
  lc.cloud = sphere_cloud(96, 51);
  lc.object_label = 0;
  const auto report = r3d::score_cloud(lc, ckpt, 4, 1, 2);
  CHECK(report.id == "sample");
  CHECK(report.label == 0);
  CHECK(report.input.size() == 48);
  CHECK(report.reconstruction.size() == 48);
  CHECK(report.point_scores.size() == 48);
  CHECK(report.object_score >= 0.0);
}

TEST_CASE("evaluate rejects degenerate test sets") {
  const Checkpoint ckpt = zero_checkpoint(64);
  CHECK_THROWS_AS(r3d::evaluate({}, ckpt, 4, 1), r3d::SingleClass);

  std::vector<LabeledCloud> one_class;
  LabeledCloud lc;
  lc.cloud = sphere_cloud(64, 1);
  lc.object_label = 0;
  one_class.push_back(lc);
  CHECK_THROWS_AS(r3d::evaluate(one_class, ckpt, 4, 1), r3d::SingleClass);

  LabeledCloud anom;
  anom.id = "bare";
  anom.cloud = sphere_cloud(64, 2);  // no per-point labels
  anom.object_label = 1;
  auto set = one_class;
  set.push_back(anom);
  CHECK_THROWS_AS(r3d::evaluate(set, ckpt, 4, 1), r3d::MissingPointLabels);
}

TEST_CASE("evaluate is deterministic and thread-count independent") {
  const Checkpoint ckpt = zero_checkpoint(64);
  const auto set = defect_test_set(3, 3);
  const auto a = r3d::evaluate(set, ckpt, 4, 9, 1);
  const auto b = r3d::evaluate(set, ckpt, 4, 9, 3);
  CHECK(a.i_auroc == b.i_auroc);
  CHECK(a.p_auroc == b.p_auroc);
  REQUIRE(a.reports.size() == b.reports.size());
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    CHECK(a.reports[i].object_score == b.reports[i].object_score);
    CHECK(a.reports[i].point_scores == b.reports[i].point_scores);
  }
}

TEST_CASE("oracle reconstructions give perfect AUROC on synthetic defects") {
  // Feed the scoring path the ground-truth defect-free cloud in place of a
  // model reconstruction. With k = 1 every defect point scores its squared
  // displacement and every clean point scores zero, so both metrics saturate.
  std::vector<double> object_scores, pooled_scores;
  std::vector<int> object_labels, pooled_labels;

  for (std::size_t i = 0; i < 3; ++i) {
    const PointCloud pc = sphere_cloud(96, 300 + i);
    const auto scores = r3d::point_scores(pc, pc, 1);
    object_scores.push_back(r3d::object_score(scores));
    object_labels.push_back(0);
    for (double s : scores) {
      pooled_scores.push_back(s);
      pooled_labels.push_back(0);
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    r3d::PatchGenConfig pg;
    pg.seed = 400 + i;
    const auto sample = r3d::patch_gen(sphere_cloud(96, 350 + i), pg);
    const auto scores = r3d::point_scores(sample.anomalous, sample.target, 1);
    object_scores.push_back(r3d::object_score(scores));
    object_labels.push_back(1);
    for (std::size_t j = 0; j < scores.size(); ++j) {
      pooled_scores.push_back(scores[j]);
      pooled_labels.push_back(sample.defect_mask[j] ? 1 : 0);
    }
  }

  CHECK(r3d::auroc(object_scores, object_labels) == 1.0);
  CHECK(r3d::auroc(pooled_scores, pooled_labels) == 1.0);
}

TEST_CASE("evaluate composes its AUROC values from the emitted reports") {
  const Checkpoint ckpt = zero_checkpoint(64);
  const auto set = defect_test_set(4, 4);
  const auto result = r3d::evaluate(set, ckpt, 4, 13);

  std::vector<double> object_scores;
  std::vector<int> object_labels;
  std::vector<double> pooled_scores;
  std::vector<int> pooled_labels;
  for (const auto& report : result.reports) {
    object_scores.push_back(report.object_score);
    object_labels.push_back(report.label);
    for (std::size_t i = 0; i < report.point_scores.size(); ++i) {
      pooled_scores.push_back(report.point_scores[i]);
      pooled_labels.push_back(
          report.input.has_labels() && (*report.input.labels)[i] != 0 ? 1 : 0);
    }
  }
  CHECK(result.i_auroc == r3d::auroc(object_scores, object_labels));
  CHECK(result.p_auroc == r3d::auroc(pooled_scores, pooled_labels));
  CHECK(result.reports.size() == set.size());
}
