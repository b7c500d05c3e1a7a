#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "r3d/diffusion.hpp"
#include "r3d/errors.hpp"
#include "r3d/geom.hpp"
#include "r3d/logging.hpp"
#include "r3d/model.hpp"
#include "r3d/patchgen.hpp"
#include "r3d/rng.hpp"

namespace r3d {

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 16;
  int iterations = 2000;
  std::uint64_t seed = 0;
  PatchGenConfig patchgen;
  // When defect_scale_max > 0, each training tuple draws its synthetic defect
  // scale uniformly from [defect_scale_min, defect_scale_max] instead of the
  // fixed patchgen.scale_s. A reconstruction chain feeds the denoiser partial
  // repair fields of every magnitude, so the model must handle defect content
  // well below and above the evaluation defect scale.
  double defect_scale_min = 0.0;
  double defect_scale_max = 0.0;
  int t_max = kDefaultTMax;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int n_points = 1024;
  WidthConfig widths;
  int log_every = 50;
  int n_threads = 1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (iterations < 1) throw ConfigError("train config: iterations must be >= 1");
    if (n_points < 1) throw ConfigError("train config: n_points must be >= 1");
    if (log_every < 1) throw ConfigError("train config: log_every must be >= 1");
    if (defect_scale_min < 0.0 || defect_scale_max < 0.0 ||
        (defect_scale_max > 0.0 && defect_scale_min > defect_scale_max))
      throw ConfigError("train config: defect scale range must satisfy 0 <= min <= max");
    widths.validate();
  }

  // Canonical text of every field that shapes the trained model; iteration
  // count is excluded so a resume that extends training matches its source.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "lr=" << learning_rate << ";batch=" << batch_size << ";seed=" << seed
       << ";tmax=" << t_max << ";beta_start=" << beta_start << ";beta_end=" << beta_end
       << ";adam=" << adam_beta1 << ',' << adam_beta2 << ',' << adam_eps
       << ";n_points=" << n_points << ";pg.ratio=" << patchgen.selection_ratio
       << ";pg.scale=" << patchgen.scale_s
       << ";pg.scale_range=" << defect_scale_min << ',' << defect_scale_max
       << ";pg.kind=" << (patchgen.kind ? to_string(*patchgen.kind) : "uniform")
       << ";pg.rotate=" << (patchgen.rotate ? 1 : 0) << ";pg.seed=" << patchgen.seed
       << ";enc=";
    for (int w : widths.encoder_hidden) os << w << ',';
    os << ";embed=" << widths.embedding_dim << ";dn=";
    for (int w : widths.denoiser_hidden) os << w << ',';
    return os.str();
  }

  std::uint64_t digest() const { return fnv1a64(canonical()); }
};

struct AdamState {
  GradientSet m;
  GradientSet v;
  long long step = 0;
};

inline AdamState make_adam_state(const WidthConfig& w) {
  return {zero_gradients(w), zero_gradients(w), 0};
}

template <class Params>
std::vector<Mat*> array_ptrs(Params& p) {
  std::vector<Mat*> out;
  for_each_array(p, [&out](const std::string&, Mat& m) { out.push_back(&m); });
  return out;
}

template <class Params>
std::vector<const Mat*> array_ptrs(const Params& p) {
  std::vector<const Mat*> out;
  for_each_array(const_cast<Params&>(p),
                 [&out](const std::string&, Mat& m) { out.push_back(&m); });
  return out;
}

// Standard bias-corrected Adam, applied in place.
inline void adam_step(ModelParams& params, const GradientSet& grads, AdamState& state,
                      double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
  if (!(lr > 0.0)) throw Error("adam_step: lr must be > 0");
  auto ps = array_ptrs(params);
  auto gs = array_ptrs(grads);
  auto ms = array_ptrs(state.m);
  auto vs = array_ptrs(state.v);
  if (ps.size() != gs.size()) throw ShapeMismatch("adam_step: gradient array count differs");
  state.step += 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Mat& p = *ps[i];
    const Mat& g = *gs[i];
    Mat& m = *ms[i];
    Mat& v = *vs[i];
    if (p.rows() != g.rows() || p.cols() != g.cols())
      throw ShapeMismatch("adam_step: gradient shape differs from parameter");
    m = beta1 * m + (1.0 - beta1) * g;
    v = (beta2 * v.array() + (1.0 - beta2) * g.array().square()).matrix();
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

struct Checkpoint {
  WidthConfig widths;
  ModelParams params;
  int t_max = kDefaultTMax;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  int n_points = 1024;
  std::uint64_t config_digest = 0;
  long long iteration = 0;
  std::optional<AdamState> adam;

  NoiseSchedule schedule() const { return linear_schedule(t_max, beta_start, beta_end); }
};

namespace detail {

inline void write_array(std::ofstream& os, const std::string& name, const Mat& m) {
  os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double)) * m.size());
}

inline void read_array(std::ifstream& is, const std::string& expected_name, Mat& m) {
  std::string line;
  if (!std::getline(is, line))
    throw CheckpointError("checkpoint: truncated before array " + expected_name);
  std::istringstream ls(line);
  std::string name;
  Eigen::Index rows = 0, cols = 0;
  if (!(ls >> name >> rows >> cols))
    throw CheckpointError("checkpoint: malformed array header '" + line + "'");
  if (name != expected_name)
    throw CheckpointError("checkpoint: expected array " + expected_name + ", found " + name);
  if (rows != m.rows() || cols != m.cols())
    throw CheckpointError("checkpoint: shape mismatch for array " + name);
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double)) * m.size());
  if (!is) throw CheckpointError("checkpoint: truncated data for array " + name);
}

inline std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open for writing: " + path);
  os << "r3dad-checkpoint 1\n";
  os << "encoder_hidden";
  for (int w : ckpt.widths.encoder_hidden) os << ' ' << w;
  os << "\nembedding_dim " << ckpt.widths.embedding_dim;
  os << "\ndenoiser_hidden";
  for (int w : ckpt.widths.denoiser_hidden) os << ' ' << w;
  os << "\nt_max " << ckpt.t_max;
  os << "\nbeta_start " << detail::hex_double(ckpt.beta_start);
  os << "\nbeta_end " << detail::hex_double(ckpt.beta_end);
  os << "\nn_points " << ckpt.n_points;
  os << "\niteration " << ckpt.iteration;
  char digest[32];
  std::snprintf(digest, sizeof(digest), "%016llx",
                static_cast<unsigned long long>(ckpt.config_digest));
  os << "\nconfig_digest " << digest;
  os << "\nhas_adam " << (ckpt.adam ? 1 : 0);
  os << "\nadam_step " << (ckpt.adam ? ckpt.adam->step : 0);
  os << "\nend_header\n";

  for_each_array(const_cast<ModelParams&>(ckpt.params),
                 [&os](const std::string& name, Mat& m) { detail::write_array(os, name, m); });
  if (ckpt.adam) {
    for_each_array(const_cast<GradientSet&>(ckpt.adam->m),
                   [&os](const std::string& name, Mat& m) {
                     detail::write_array(os, "adam_m." + name, m);
                   });
    for_each_array(const_cast<GradientSet&>(ckpt.adam->v),
                   [&os](const std::string& name, Mat& m) {
                     detail::write_array(os, "adam_v." + name, m);
                   });
  }
  os.flush();
  if (!os) throw IoError("checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "r3dad-checkpoint 1")
    throw CheckpointError("checkpoint: bad format tag in " + path);

  Checkpoint ckpt;
  WidthConfig w;
  w.encoder_hidden.clear();
  w.denoiser_hidden.clear();
  int has_adam = 0;
  long long adam_step_count = 0;
  while (std::getline(is, line)) {
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "encoder_hidden") {
      int v;
      while (ls >> v) w.encoder_hidden.push_back(v);
    } else if (key == "denoiser_hidden") {
      int v;
      while (ls >> v) w.denoiser_hidden.push_back(v);
    } else if (key == "embedding_dim") {
      ls >> w.embedding_dim;
    } else if (key == "t_max") {
      ls >> ckpt.t_max;
    } else if (key == "beta_start") {
      std::string hex;
      ls >> hex;
      ckpt.beta_start = std::strtod(hex.c_str(), nullptr);
    } else if (key == "beta_end") {
      std::string hex;
      ls >> hex;
      ckpt.beta_end = std::strtod(hex.c_str(), nullptr);
    } else if (key == "n_points") {
      ls >> ckpt.n_points;
    } else if (key == "iteration") {
      ls >> ckpt.iteration;
    } else if (key == "config_digest") {
      std::string hex;
      ls >> hex;
      ckpt.config_digest = std::strtoull(hex.c_str(), nullptr, 16);
    } else if (key == "has_adam") {
      ls >> has_adam;
    } else if (key == "adam_step") {
      ls >> adam_step_count;
    } else {
      throw CheckpointError("checkpoint: unknown header key '" + key + "'");
    }
  }
  if (line != "end_header") throw CheckpointError("checkpoint: missing end_header");

  ckpt.widths = w;
  ckpt.params = make_shaped(w);
  for_each_array(ckpt.params, [&is](const std::string& name, Mat& m) {
    detail::read_array(is, name, m);
  });
  if (has_adam) {
    AdamState adam = make_adam_state(w);
    adam.step = adam_step_count;
    for_each_array(adam.m, [&is](const std::string& name, Mat& m) {
      detail::read_array(is, "adam_m." + name, m);
    });
    for_each_array(adam.v, [&is](const std::string& name, Mat& m) {
      detail::read_array(is, "adam_v." + name, m);
    });
    ckpt.adam = std::move(adam);
  }
  return ckpt;
}

struct IterationMetrics {
  double noise_loss = 0.0;
  double recon_mse = 0.0;
};

namespace streams_train {
inline constexpr std::uint64_t kInit = 0x696e6974706172ULL;
}

// One optimization step: draw a batch from the pool with replacement,
// normalize + downsample each cloud, synthesize a defect, then update the
// parameters from the noise-prediction gradients.
inline IterationMetrics train_iteration(const std::vector<PointCloud>& normal_pool,
                                        ModelParams& params, AdamState& adam,
                                        const TrainConfig& cfg, const NoiseSchedule& sched,
                                        long long iter_index) {
  if (normal_pool.empty()) throw EmptyPool("train_iteration: empty normal pool");

  Rng batch_rng(stream_seed(cfg.seed, streams::kBatch, static_cast<std::uint64_t>(iter_index)));
  std::vector<TrainingTuple> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int j = 0; j < cfg.batch_size; ++j) {
    const auto pick = batch_rng.uniform_index(normal_pool.size());
    const auto global =
        static_cast<std::uint64_t>(iter_index) * static_cast<std::uint64_t>(cfg.batch_size) +
        static_cast<std::uint64_t>(j);
    auto [normalized, tf] = normalize_cloud(normal_pool[pick]);
    PointCloud ds = downsample_random(normalized, static_cast<std::size_t>(cfg.n_points),
                                      stream_seed(cfg.seed, streams::kDownsample, global));
    PatchGenConfig pg = cfg.patchgen;
    pg.seed = cfg.patchgen.seed + global;
    if (cfg.defect_scale_max > 0.0) {
      Rng scale_rng(stream_seed(cfg.seed, streams::kScale, global));
      pg.scale_s = scale_rng.uniform_range(cfg.defect_scale_min, cfg.defect_scale_max);
    }
    AugmentedSample sample = patch_gen(ds, pg);
    batch.push_back({std::move(sample.anomalous), std::move(sample.gt_displacement)});
  }

  LossResult res = loss_and_gradients(batch, params, sched,
                                      stream_seed(cfg.seed, streams::kLoss,
                                                  static_cast<std::uint64_t>(iter_index)),
                                      cfg.n_threads);
  if (!std::isfinite(res.noise_loss) || !std::isfinite(res.recon_mse))
    throw Divergence("training diverged (non-finite loss) at iteration " +
                     std::to_string(iter_index + 1));
  adam_step(params, res.grads, adam, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
            cfg.adam_eps);
  return {res.noise_loss, res.recon_mse};
}

struct MetricsRow {
  long long iteration = 0;  // 1-based, row covers the window ending here
  double noise_loss = 0.0;  // window mean
  double recon_mse = 0.0;   // window mean
  double wall_ms = 0.0;     // window wall time
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
};

// Full training loop; optionally resumes from a checkpoint whose config
// digest matches. Deterministic: per-iteration seeds derive from cfg.seed and
// the iteration index, so a resumed run continues the exact stream.
inline TrainResult train(const std::vector<PointCloud>& normal_pool, const TrainConfig& cfg,
                         const std::optional<Checkpoint>& resume = std::nullopt) {
  cfg.validate();
  if (normal_pool.empty()) throw EmptyPool("train: empty normal pool");
  const NoiseSchedule sched = linear_schedule(cfg.t_max, cfg.beta_start, cfg.beta_end);

  ModelParams params;
  AdamState adam = make_adam_state(cfg.widths);
  long long start_iter = 0;
  if (resume) {
    if (resume->config_digest != cfg.digest())
      throw CheckpointError("train: checkpoint config digest does not match this config");
    if (!(resume->widths == cfg.widths))
      throw CheckpointError("train: checkpoint widths do not match this config");
    params = resume->params;
    if (resume->adam) adam = *resume->adam;
    start_iter = resume->iteration;
  } else {
    params = init_params(stream_seed(cfg.seed, streams_train::kInit), cfg.widths);
  }

  TrainResult result;
  double win_noise = 0.0, win_recon = 0.0;
  long long win_count = 0;
  auto win_start = std::chrono::steady_clock::now();
  for (long long iter = start_iter; iter < cfg.iterations; ++iter) {
    const IterationMetrics m = train_iteration(normal_pool, params, adam, cfg, sched, iter);
    win_noise += m.noise_loss;
    win_recon += m.recon_mse;
    win_count += 1;
    const long long done = iter + 1;
    if (done % cfg.log_every == 0 || done == cfg.iterations) {
      const auto now = std::chrono::steady_clock::now();
      MetricsRow row;
      row.iteration = done;
      row.noise_loss = win_noise / static_cast<double>(win_count);
      row.recon_mse = win_recon / static_cast<double>(win_count);
      row.wall_ms = std::chrono::duration<double, std::milli>(now - win_start).count();
      result.metrics.push_back(row);
      log_info("iter %lld  noise_loss %.6f  recon_mse %.6f  (%.0f ms)", row.iteration,
               row.noise_loss, row.recon_mse, row.wall_ms);
      win_noise = win_recon = 0.0;
      win_count = 0;
      win_start = now;
    }
  }

  result.checkpoint.widths = cfg.widths;
  result.checkpoint.params = std::move(params);
  result.checkpoint.t_max = cfg.t_max;
  result.checkpoint.beta_start = cfg.beta_start;
  result.checkpoint.beta_end = cfg.beta_end;
  result.checkpoint.n_points = cfg.n_points;
  result.checkpoint.config_digest = cfg.digest();
  result.checkpoint.iteration = std::max(start_iter, static_cast<long long>(cfg.iterations));
  result.checkpoint.adam = std::move(adam);
  return result;
}

inline void write_metrics(const std::vector<MetricsRow>& rows, const std::string& path,
                          bool append = false) {
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw IoError("metrics: cannot open for writing: " + path);
  if (!append) os << "iteration\tnoise_loss\trecon_mse\twall_ms\n";
  os.precision(17);
  for (const auto& r : rows)
    os << r.iteration << '\t' << r.noise_loss << '\t' << r.recon_mse << '\t' << r.wall_ms
       << '\n';
  if (!os) throw IoError("metrics: write failed: " + path);
}

}  // namespace r3d
