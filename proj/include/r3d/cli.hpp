#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "r3d/dataio.hpp"
#include "r3d/detect.hpp"
#include "r3d/errors.hpp"
#include "r3d/logging.hpp"
#include "r3d/parallel.hpp"
#include "r3d/patchgen.hpp"
#include "r3d/train.hpp"

namespace r3d {

// One flat bag of settings per subcommand instance; an INI section named
// after a subcommand fills that instance only, so a single pipeline config
// can carry sections for every stage without cross-talk.
struct RunConfig {
  // shared
  std::uint64_t seed = 0;
  std::string out = ".";
  long long threads = 0;  // 0 picks the logical core count

  // data inputs
  std::string manifest;
  std::string in_path;
  std::string checkpoint;
  std::string scores;
  std::string resume;

  // synthetic shapes
  std::string shape = "sphere";
  std::string class_name = "sphere";
  long long shape_points = 1024;
  double shape_a = 1.0;
  double shape_b = 0.3;
  double shape_c = 1.0;
  double jitter = 0.0;
  long long n_train = 4;
  long long n_test_normal = 25;
  long long n_test_anom = 25;

  // defect synthesis
  double ratio = 1.0 / 32.0;
  double scale = 0.1;
  std::string kind = "mixed";
  bool rotate = true;

  // diffusion schedule
  long long steps = kDefaultTMax;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;

  // training
  double lr = 0.001;
  long long iterations = 2000;
  long long batch = 16;
  long long points = 1024;
  long long log_every = 50;
  long long embedding = 256;
  std::string encoder = "128,256,512";
  std::string denoiser = "128,256,512,256,128";

  // detection
  long long k = 8;
};

namespace cli_detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline int resolve_threads(long long requested) {
  if (requested > 0) return static_cast<int>(requested);
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

inline std::vector<int> parse_width_list(const std::string& text, const std::string& flag) {
  std::vector<int> widths;
  std::stringstream ss(text);
  std::string piece;
  while (std::getline(ss, piece, ',')) {
    try {
      std::size_t used = 0;
      const int w = std::stoi(piece, &used);
      if (used != piece.size() || w < 1) throw std::invalid_argument(piece);
      widths.push_back(w);
    } catch (const std::exception&) {
      throw ConfigError(flag + ": expected comma-separated positive integers, got '" +
                        text + "'");
    }
  }
  if (widths.empty())
    throw ConfigError(flag + ": expected at least one layer width, got '" + text + "'");
  return widths;
}

inline std::optional<DefectKind> parse_kind(const std::string& kind) {
  if (kind == "mixed") return std::nullopt;
  const auto parsed = defect_kind_from_string(kind);
  if (!parsed)
    throw ConfigError("kind: expected bulge, sink, damage, or mixed, got '" + kind + "'");
  return parsed;
}

inline ShapeKind parse_shape(const std::string& shape) {
  const auto parsed = shape_kind_from_string(shape);
  if (!parsed)
    throw ConfigError("shape: expected sphere, torus, box, or ellipsoid, got '" + shape +
                      "'");
  return *parsed;
}

inline PatchGenConfig make_patchgen_config(const RunConfig& rc) {
  PatchGenConfig pg;
  pg.selection_ratio = rc.ratio;
  pg.scale_s = rc.scale;
  pg.kind = parse_kind(rc.kind);
  pg.rotate = rc.rotate;
  pg.seed = rc.seed;
  if (!(pg.selection_ratio > 0.0) || pg.selection_ratio > 1.0)
    throw ConfigError("ratio: must be in (0, 1]");
  if (pg.scale_s < 0.0) throw ConfigError("scale: must be >= 0");
  return pg;
}

inline SyntheticShapeSpec make_shape_spec(const RunConfig& rc) {
  SyntheticShapeSpec spec;
  spec.kind = parse_shape(rc.shape);
  if (rc.shape_points < 64) throw ConfigError("n-points: must be >= 64");
  spec.n_points = static_cast<std::size_t>(rc.shape_points);
  spec.a = rc.shape_a;
  spec.b = rc.shape_b;
  spec.c = rc.shape_c;
  spec.jitter_std = rc.jitter;
  try {
    spec.validate();
  } catch (const InvalidSpec& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

inline TrainConfig make_train_config(const RunConfig& rc) {
  TrainConfig cfg;
  cfg.learning_rate = rc.lr;
  cfg.batch_size = static_cast<int>(rc.batch);
  cfg.iterations = static_cast<int>(rc.iterations);
  cfg.seed = rc.seed;
  cfg.patchgen = make_patchgen_config(rc);
  if (rc.steps < 1) throw ConfigError("steps: must be >= 1");
  cfg.t_max = static_cast<int>(rc.steps);
  cfg.beta_start = rc.beta_start;
  cfg.beta_end = rc.beta_end;
  cfg.n_points = static_cast<int>(rc.points);
  cfg.widths.encoder_hidden = parse_width_list(rc.encoder, "encoder");
  cfg.widths.embedding_dim = static_cast<int>(rc.embedding);
  cfg.widths.denoiser_hidden = parse_width_list(rc.denoiser, "denoiser");
  cfg.log_every = static_cast<int>(rc.log_every);
  cfg.n_threads = resolve_threads(rc.threads);
  try {
    cfg.validate();
  } catch (const InvalidWidths& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline void write_resolved_config(const std::string& path, const std::string& section,
                                  const KeyValues& kv) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("resolved config: cannot open for writing: " + path);
  os << '[' << section << "]\n";
  for (const auto& [key, value] : kv) os << key << " = " << value << '\n';
  if (!os) throw IoError("resolved config: write failed: " + path);
}

inline KeyValues shared_keys(const RunConfig& rc) {
  return {{"seed", std::to_string(rc.seed)},
          {"out", rc.out},
          {"threads", std::to_string(rc.threads)}};
}

inline void append_patchgen_keys(const RunConfig& rc, KeyValues& kv) {
  kv.emplace_back("ratio", fmt_double(rc.ratio));
  kv.emplace_back("scale", fmt_double(rc.scale));
  kv.emplace_back("kind", rc.kind);
  kv.emplace_back("rotate", rc.rotate ? "true" : "false");
}

inline std::string stem_of(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

}  // namespace cli_detail

inline int cmd_synth(const RunConfig& rc) {
  namespace fs = std::filesystem;
  const SyntheticShapeSpec spec = cli_detail::make_shape_spec(rc);
  const PatchGenConfig pg = cli_detail::make_patchgen_config(rc);
  if (rc.n_train < 1 || rc.n_test_normal < 1 || rc.n_test_anom < 1)
    throw ConfigError("split counts: train/test-normal/test-anom must all be >= 1");

  const DatasetManifest manifest = build_synthetic_dataset(
      rc.out, rc.class_name, spec, static_cast<std::size_t>(rc.n_train),
      static_cast<std::size_t>(rc.n_test_normal), static_cast<std::size_t>(rc.n_test_anom),
      pg, rc.seed);

  cli_detail::KeyValues kv = cli_detail::shared_keys(rc);
  kv.emplace_back("class-name", rc.class_name);
  kv.emplace_back("shape", rc.shape);
  kv.emplace_back("n-points", std::to_string(rc.shape_points));
  kv.emplace_back("a", cli_detail::fmt_double(rc.shape_a));
  kv.emplace_back("b", cli_detail::fmt_double(rc.shape_b));
  kv.emplace_back("c", cli_detail::fmt_double(rc.shape_c));
  kv.emplace_back("jitter", cli_detail::fmt_double(rc.jitter));
  kv.emplace_back("train-count", std::to_string(rc.n_train));
  kv.emplace_back("test-normal-count", std::to_string(rc.n_test_normal));
  kv.emplace_back("test-anom-count", std::to_string(rc.n_test_anom));
  cli_detail::append_patchgen_keys(rc, kv);
  cli_detail::write_resolved_config((fs::path(manifest.root) / "resolved.ini").string(),
                                    "synth", kv);

  std::cout << (fs::path(manifest.root) / "manifest.tsv").string() << '\n';
  return 0;
}

inline int cmd_augment(const RunConfig& rc) {
  namespace fs = std::filesystem;
  if (rc.in_path.empty()) throw ConfigError("augment: --in is required");
  std::vector<std::string> inputs;
  if (fs::is_directory(rc.in_path)) {
    for (const auto& entry : fs::directory_iterator(rc.in_path))
      if (entry.is_regular_file() && entry.path().extension() == ".ply")
        inputs.push_back(entry.path().string());
    std::sort(inputs.begin(), inputs.end());
  } else if (fs::exists(rc.in_path)) {
    inputs.push_back(rc.in_path);
  }
  if (inputs.empty()) throw IoError("augment: no .ply inputs under " + rc.in_path);

  std::error_code ec;
  fs::create_directories(rc.out, ec);
  if (ec) throw IoError("augment: cannot create output directory " + rc.out);

  const PatchGenConfig base = cli_detail::make_patchgen_config(rc);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const PointCloud normalized = normalize_cloud(load_ply(inputs[i])).first;
    PatchGenConfig pg = base;
    pg.seed = rc.seed + i;
    const AugmentedSample sample = patch_gen(normalized, pg);

    const std::string stem = cli_detail::stem_of(inputs[i]);
    const std::string ply_name = stem + "_anom.ply";
    save_ply(sample.anomalous, (fs::path(rc.out) / ply_name).string());

    std::size_t n_defect = 0;
    for (const bool flagged : sample.defect_mask) n_defect += flagged ? 1 : 0;
    nlohmann::json meta;
    meta["source"] = inputs[i];
    meta["output"] = ply_name;
    meta["kind"] = to_string(sample.kind);
    meta["viewpoint"] = {sample.viewpoint.x, sample.viewpoint.y, sample.viewpoint.z};
    meta["defect_points"] = n_defect;
    meta["selection_ratio"] = pg.selection_ratio;
    meta["scale"] = pg.scale_s;
    meta["rotate"] = pg.rotate;
    meta["seed"] = pg.seed;
    std::ofstream meta_os((fs::path(rc.out) / (stem + "_anom.json")).string(),
                          std::ios::trunc);
    if (!meta_os) throw IoError("augment: cannot write metadata for " + stem);
    meta_os << meta.dump(2) << '\n';

    std::cout << ply_name << "\tkind=" << to_string(sample.kind)
              << "\tdefect_points=" << n_defect << '\n';
  }

  cli_detail::KeyValues kv = cli_detail::shared_keys(rc);
  kv.emplace_back("in", rc.in_path);
  cli_detail::append_patchgen_keys(rc, kv);
  cli_detail::write_resolved_config((fs::path(rc.out) / "resolved.ini").string(), "augment",
                                    kv);
  return 0;
}

inline int cmd_train(const RunConfig& rc) {
  namespace fs = std::filesystem;
  if (rc.manifest.empty()) throw ConfigError("train: --manifest is required");
  const TrainConfig cfg = cli_detail::make_train_config(rc);

  const DatasetManifest manifest = load_manifest(rc.manifest);
  std::vector<PointCloud> pool;
  pool.reserve(manifest.train.size());
  for (const auto& path : manifest.train) pool.push_back(load_ply(path));

  std::optional<Checkpoint> resume;
  if (!rc.resume.empty()) resume = load_checkpoint(rc.resume);

  std::error_code ec;
  fs::create_directories(rc.out, ec);
  if (ec) throw IoError("train: cannot create output directory " + rc.out);

  const TrainResult result = train(pool, cfg, resume);

  const std::string ckpt_path = (fs::path(rc.out) / "checkpoint.bin").string();
  save_checkpoint(result.checkpoint, ckpt_path);
  const std::string metrics_path = (fs::path(rc.out) / "metrics.tsv").string();
  const bool append = resume.has_value() && fs::exists(metrics_path);
  write_metrics(result.metrics, metrics_path, append);

  cli_detail::KeyValues kv = cli_detail::shared_keys(rc);
  kv.emplace_back("manifest", rc.manifest);
  kv.emplace_back("resume", rc.resume);
  kv.emplace_back("lr", cli_detail::fmt_double(rc.lr));
  kv.emplace_back("iterations", std::to_string(rc.iterations));
  kv.emplace_back("batch", std::to_string(rc.batch));
  kv.emplace_back("points", std::to_string(rc.points));
  kv.emplace_back("log-every", std::to_string(rc.log_every));
  kv.emplace_back("steps", std::to_string(rc.steps));
  kv.emplace_back("beta-start", cli_detail::fmt_double(rc.beta_start));
  kv.emplace_back("beta-end", cli_detail::fmt_double(rc.beta_end));
  kv.emplace_back("embedding", std::to_string(rc.embedding));
  kv.emplace_back("encoder", rc.encoder);
  kv.emplace_back("denoiser", rc.denoiser);
  cli_detail::append_patchgen_keys(rc, kv);
  cli_detail::write_resolved_config((fs::path(rc.out) / "resolved.ini").string(), "train",
                                    kv);

  std::cout << "checkpoint\t" << ckpt_path << '\n'
            << "iteration\t" << result.checkpoint.iteration << '\n';
  if (!result.metrics.empty()) {
    const MetricsRow& last = result.metrics.back();
    std::cout << "final_noise_loss\t" << cli_detail::fmt_double(last.noise_loss) << '\n'
              << "final_recon_mse\t" << cli_detail::fmt_double(last.recon_mse) << '\n';
  } else {
    std::cout << "final_noise_loss\tnone (no new iterations)\n";
  }
  return 0;
}

inline int cmd_detect(const RunConfig& rc) {
  namespace fs = std::filesystem;
  if (rc.checkpoint.empty()) throw ConfigError("detect: --checkpoint is required");
  if (rc.manifest.empty()) throw ConfigError("detect: --manifest is required");
  if (rc.k < 1) throw ConfigError("k: must be >= 1");

  const Checkpoint ckpt = load_checkpoint(rc.checkpoint);
  const DatasetManifest manifest = load_manifest(rc.manifest);
  if (manifest.test.empty())
    throw ParseError("detect: manifest has no test entries: " + rc.manifest);

  std::vector<LabeledCloud> test_set;
  test_set.reserve(manifest.test.size());
  for (const auto& entry : manifest.test)
    test_set.push_back({cli_detail::stem_of(entry.path), load_ply(entry.path),
                        entry.object_label});

  std::error_code ec;
  fs::create_directories(fs::path(rc.out) / "ply", ec);
  if (ec) throw IoError("detect: cannot create output directory " + rc.out);

  std::vector<AnomalyReport> reports(test_set.size());
  parallel_for(test_set.size(), cli_detail::resolve_threads(rc.threads),
               [&](std::size_t i) {
                 reports[i] = score_cloud(test_set[i], ckpt,
                                          static_cast<std::size_t>(rc.k),
                                          stream_seed(rc.seed, streams::kDownsample, i),
                                          stream_seed(rc.seed, streams::kRecon, i));
               });

  std::ofstream table((fs::path(rc.out) / "scores.tsv").string(), std::ios::trunc);
  if (!table) throw IoError("detect: cannot write scores.tsv under " + rc.out);
  table << "id\tobject_label\tobject_score\tn_points\tply\n";
  for (const auto& report : reports) {
    const std::string ply_rel = "ply/" + report.id + ".ply";
    save_ply(report.input, (fs::path(rc.out) / ply_rel).string(), &report.point_scores);
    save_ply(report.reconstruction,
             (fs::path(rc.out) / ("ply/" + report.id + "_recon.ply")).string());
    table << report.id << '\t' << report.label << '\t'
          << cli_detail::fmt_double(report.object_score) << '\t'
          << report.input.size() << '\t' << ply_rel << '\n';
    char line[160];
    std::snprintf(line, sizeof(line), "%s\tlabel=%d\tobject_score=%.6f", report.id.c_str(),
                  report.label, report.object_score);
    std::cout << line << '\n';
  }
  if (!table) throw IoError("detect: write failed for scores.tsv under " + rc.out);

  cli_detail::KeyValues kv = cli_detail::shared_keys(rc);
  kv.emplace_back("checkpoint", rc.checkpoint);
  kv.emplace_back("manifest", rc.manifest);
  kv.emplace_back("k", std::to_string(rc.k));
  cli_detail::write_resolved_config((fs::path(rc.out) / "resolved.ini").string(), "detect",
                                    kv);
  return 0;
}

inline int cmd_eval(const RunConfig& rc) {
  namespace fs = std::filesystem;
  if (rc.scores.empty()) throw ConfigError("eval: --scores is required");
  if (rc.manifest.empty()) throw ConfigError("eval: --manifest is required");

  fs::path table_path(rc.scores);
  if (fs::is_directory(table_path)) table_path /= "scores.tsv";
  const fs::path score_dir = table_path.parent_path();

  std::ifstream table(table_path.string());
  if (!table) throw IoError("eval: cannot open score table: " + table_path.string());
  struct ScoreRow {
    double object_score = 0.0;
    std::string ply;
  };
  std::map<std::string, ScoreRow> by_id;
  std::string line;
  if (!std::getline(table, line))
    throw ParseError("eval: empty score table: " + table_path.string());
  std::size_t line_no = 1;
  while (std::getline(table, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, ply;
    int label = 0;
    double score = 0.0;
    std::size_t n_points = 0;
    if (!(ls >> id >> label >> score >> n_points >> ply))
      throw ParseError("eval: " + table_path.string() + ":" + std::to_string(line_no) +
                       ": malformed row");
    by_id[id] = {score, ply};
  }

  const DatasetManifest manifest = load_manifest(rc.manifest);
  if (manifest.test.empty())
    throw ParseError("eval: manifest has no test entries: " + rc.manifest);

  const std::size_t n = manifest.test.size();
  std::vector<double> object_scores(n, 0.0);
  std::vector<int> object_labels(n, 0);
  std::vector<std::vector<double>> point_score_rows(n);
  std::vector<std::vector<int>> point_label_rows(n);

  parallel_for(n, cli_detail::resolve_threads(rc.threads), [&](std::size_t i) {
    const TestEntry& entry = manifest.test[i];
    const std::string id = cli_detail::stem_of(entry.path);
    const auto found = by_id.find(id);
    if (found == by_id.end())
      throw ParseError("eval: score table has no row for test sample '" + id + "'");
    object_scores[i] = found->second.object_score;
    object_labels[i] = entry.object_label;

    const PlyContents scored = load_ply_full((score_dir / found->second.ply).string());
    if (!scored.scores)
      throw ParseError("eval: " + found->second.ply + " lacks an anomaly_score channel");
    point_score_rows[i] = *scored.scores;
    if (entry.object_label != 0) {
      if (!scored.cloud.labels)
        throw MissingPointLabels("eval: anomalous sample '" + id +
                                 "' lacks a point label channel");
      point_label_rows[i].assign(scored.cloud.labels->begin(), scored.cloud.labels->end());
    } else {
      point_label_rows[i].assign(scored.cloud.size(), 0);
    }
  });

  if (std::adjacent_find(object_scores.begin(), object_scores.end(),
                         std::not_equal_to<double>()) == object_scores.end())
    log_warn("eval: all object scores are identical; object AUROC is uninformative");

  std::vector<double> pooled_scores;
  std::vector<int> pooled_labels;
  for (std::size_t i = 0; i < n; ++i) {
    pooled_scores.insert(pooled_scores.end(), point_score_rows[i].begin(),
                         point_score_rows[i].end());
    pooled_labels.insert(pooled_labels.end(), point_label_rows[i].begin(),
                         point_label_rows[i].end());
  }

  const double i_auroc = auroc(object_scores, object_labels);
  const double p_auroc = auroc(pooled_scores, pooled_labels);

  std::size_t n_pos = 0;
  for (const int label : object_labels) n_pos += label != 0 ? 1 : 0;

  std::error_code ec;
  fs::create_directories(rc.out, ec);
  if (ec) throw IoError("eval: cannot create output directory " + rc.out);

  nlohmann::json result;
  result["class"] = manifest.class_name;
  result["i_auroc"] = i_auroc;
  result["p_auroc"] = p_auroc;
  result["n_test"] = n;
  result["n_object_pos"] = n_pos;
  result["n_object_neg"] = n - n_pos;
  result["n_points_scored"] = pooled_scores.size();
  std::ofstream json_os((fs::path(rc.out) / "eval.json").string(), std::ios::trunc);
  if (!json_os) throw IoError("eval: cannot write eval.json under " + rc.out);
  json_os << result.dump(2) << '\n';

  cli_detail::KeyValues kv = cli_detail::shared_keys(rc);
  kv.emplace_back("scores", rc.scores);
  kv.emplace_back("manifest", rc.manifest);
  cli_detail::write_resolved_config((fs::path(rc.out) / "resolved.ini").string(), "eval",
                                    kv);

  char row[64];
  std::cout << "metric\tvalue\n";
  std::snprintf(row, sizeof(row), "I-AUROC\t%.6f", i_auroc);
  std::cout << row << '\n';
  std::snprintf(row, sizeof(row), "P-AUROC\t%.6f", p_auroc);
  std::cout << row << '\n';
  return 0;
}

namespace cli_detail {

inline void add_shared_options(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--seed", rc.seed, "Base seed for every random stream")
      ->capture_default_str();
  sub->add_option("--out", rc.out, "Output directory")->capture_default_str();
  sub->add_option("--threads", rc.threads, "Worker threads (0 = logical cores)")
      ->capture_default_str();
}

inline void add_patchgen_options(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--ratio", rc.ratio, "Fraction of points deformed per defect")
      ->capture_default_str();
  sub->add_option("--scale", rc.scale, "Defect displacement scale")->capture_default_str();
  sub->add_option("--kind", rc.kind, "Defect kind: bulge, sink, damage, or mixed")
      ->capture_default_str();
  sub->add_flag("--rotate,!--no-rotate", rc.rotate, "Random pose augmentation")
      ->capture_default_str();
}

}  // namespace cli_detail

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"Reconstruction-based 3D point cloud anomaly detection"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "INI config file; sections are named after subcommands and hold the "
                 "same keys as that subcommand's long flags");
  app.allow_config_extras(CLI::config_extras_mode::error);

  int exit_code = 0;

  auto rc_synth = std::make_shared<RunConfig>();
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  synth->fallthrough();
  cli_detail::add_shared_options(synth, *rc_synth);
  cli_detail::add_patchgen_options(synth, *rc_synth);
  synth->add_option("--class-name", rc_synth->class_name, "Dataset class directory name")
      ->capture_default_str();
  synth->add_option("--shape", rc_synth->shape, "Shape: sphere, torus, box, or ellipsoid")
      ->capture_default_str();
  synth->add_option("--n-points", rc_synth->shape_points, "Points per generated cloud")
      ->capture_default_str();
  synth->add_option("--a", rc_synth->shape_a, "First shape parameter")
      ->capture_default_str();
  synth->add_option("--b", rc_synth->shape_b, "Second shape parameter")
      ->capture_default_str();
  synth->add_option("--c", rc_synth->shape_c, "Third shape parameter")
      ->capture_default_str();
  synth->add_option("--jitter", rc_synth->jitter, "Gaussian surface jitter stddev")
      ->capture_default_str();
  synth->add_option("--train-count", rc_synth->n_train, "Training clouds")
      ->capture_default_str();
  synth->add_option("--test-normal-count", rc_synth->n_test_normal, "Normal test clouds")
      ->capture_default_str();
  synth->add_option("--test-anom-count", rc_synth->n_test_anom, "Anomalous test clouds")
      ->capture_default_str();
  synth->callback([rc_synth, &exit_code] { exit_code = cmd_synth(*rc_synth); });

  auto rc_augment = std::make_shared<RunConfig>();
  CLI::App* augment =
      app.add_subcommand("augment", "Apply defect synthesis to each input cloud");
  augment->fallthrough();
  cli_detail::add_shared_options(augment, *rc_augment);
  cli_detail::add_patchgen_options(augment, *rc_augment);
  augment->add_option("--in", rc_augment->in_path, "Input .ply file or directory");
  augment->callback([rc_augment, &exit_code] { exit_code = cmd_augment(*rc_augment); });

  auto rc_train = std::make_shared<RunConfig>();
  CLI::App* train_cmd = app.add_subcommand("train", "Train the denoising model");
  train_cmd->fallthrough();
  cli_detail::add_shared_options(train_cmd, *rc_train);
  cli_detail::add_patchgen_options(train_cmd, *rc_train);
  train_cmd->add_option("--manifest", rc_train->manifest, "Dataset manifest path");
  train_cmd->add_option("--resume", rc_train->resume, "Checkpoint to resume from");
  train_cmd->add_option("--lr", rc_train->lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--iterations", rc_train->iterations, "Training iterations")
      ->capture_default_str();
  train_cmd->add_option("--batch", rc_train->batch, "Tuples per iteration")
      ->capture_default_str();
  train_cmd->add_option("--points", rc_train->points, "Points per training cloud")
      ->capture_default_str();
  train_cmd->add_option("--log-every", rc_train->log_every, "Metric row interval")
      ->capture_default_str();
  train_cmd->add_option("--steps", rc_train->steps, "Diffusion steps T")
      ->capture_default_str();
  train_cmd->add_option("--beta-start", rc_train->beta_start, "Schedule beta at t=1")
      ->capture_default_str();
  train_cmd->add_option("--beta-end", rc_train->beta_end, "Schedule beta at t=T")
      ->capture_default_str();
  train_cmd->add_option("--embedding", rc_train->embedding, "Shape embedding width")
      ->capture_default_str();
  train_cmd->add_option("--encoder", rc_train->encoder, "Encoder widths, comma separated")
      ->capture_default_str();
  train_cmd
      ->add_option("--denoiser", rc_train->denoiser, "Denoiser widths, comma separated")
      ->capture_default_str();
  train_cmd->callback([rc_train, &exit_code] { exit_code = cmd_train(*rc_train); });

  auto rc_detect = std::make_shared<RunConfig>();
  CLI::App* detect = app.add_subcommand("detect", "Score test clouds with a checkpoint");
  detect->fallthrough();
  cli_detail::add_shared_options(detect, *rc_detect);
  detect->add_option("--checkpoint", rc_detect->checkpoint, "Trained checkpoint path");
  detect->add_option("--manifest", rc_detect->manifest, "Dataset manifest path");
  detect->add_option("--k", rc_detect->k, "Neighborhood size for point-cluster scores")
      ->capture_default_str();
  detect->callback([rc_detect, &exit_code] { exit_code = cmd_detect(*rc_detect); });

  auto rc_eval = std::make_shared<RunConfig>();
  CLI::App* eval = app.add_subcommand("eval", "Compute AUROC from detect outputs");
  eval->fallthrough();
  cli_detail::add_shared_options(eval, *rc_eval);
  eval->add_option("--scores", rc_eval->scores, "scores.tsv path or its directory");
  eval->add_option("--manifest", rc_eval->manifest, "Dataset manifest path");
  eval->callback([rc_eval, &exit_code] { exit_code = cmd_eval(*rc_eval); });

  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidSpec& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidWidths& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidSchedule& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Divergence& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 5;
  } catch (const PointCountMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 5;
  } catch (const SingleClass& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 6;
  } catch (const MissingPointLabels& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const UnsupportedFormat& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const DegenerateCloud& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return exit_code;
}

}  // namespace r3d
