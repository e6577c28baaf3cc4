// sprm: generate synthetic workflow data, train, predict, evaluate, self-check.
//
// Exit codes: 0 success, 1 failed check, 2 usage or data error.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sprm/checkpoint.hpp"
#include "sprm/config.hpp"
#include "sprm/data_io.hpp"
#include "sprm/error.hpp"
#include "sprm/metrics.hpp"
#include "sprm/selfcheck.hpp"
#include "sprm/synthetic.hpp"
#include "sprm/training.hpp"

namespace fs = std::filesystem;
using namespace sprm;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  bool quiet = false;
};

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("SPRM_SEED");
  if (!raw || !*raw) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(raw, &used);
    if (used != std::string(raw).size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw UsageError(fmt::format("SPRM_SEED='{}' is not a non-negative integer", raw));
  }
}

// Config file (optional) < --seed < SPRM_SEED.
RunConfig resolve_config(const std::string& path, const Globals& g) {
  ParsedConfig parsed;
  if (!path.empty()) {
    parsed = load_config(path);
    for (const auto& key : parsed.defaulted) spdlog::info("config: {} not set, using default", key);
  } else {
    spdlog::info("config: no file given, using defaults for every key");
  }
  RunConfig cfg = parsed.config;
  if (g.seed) cfg.apply_seed(*g.seed);
  if (const auto s = env_seed()) cfg.apply_seed(*s);
  return cfg;
}

int cmd_gen_data(const Globals& g, const std::string& config_path, const std::string& out_dir, std::size_t count) {
  const RunConfig cfg = resolve_config(config_path, g);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw DataError(fmt::format("cannot create output directory {}", out_dir));
  const auto data = synth::generate(cfg.synth, count);
  std::vector<std::size_t> totals(cfg.synth.num_classes(), 0);
  std::size_t frames = 0;
  for (const auto& seq : data) {
    io::write_sequence(out_dir, seq);
    for (int l : seq.labels) ++totals[static_cast<std::size_t>(l)];
    frames += seq.length();
  }
  std::cout << fmt::format("wrote {} sequences to {}\n", data.size(), out_dir);
  std::cout << fmt::format("{:<8} {:>10} {:>8}\n", "phase", "frames", "share");
  for (std::size_t p = 0; p < totals.size(); ++p) {
    std::cout << fmt::format("{:<8} {:>10} {:>7.2f}%\n", fmt::format("P{}", p), totals[p],
                             frames ? 100.0 * static_cast<double>(totals[p]) / static_cast<double>(frames) : 0.0);
  }
  std::cout << fmt::format("{:<8} {:>10} {:>7.2f}%\n", "total", frames, 100.0);
  return kOk;
}

int cmd_train(const Globals& g, const std::string& config_path, const std::string& data_dir,
              const std::string& val_dir, const std::string& out, std::string history) {
  const RunConfig cfg = resolve_config(config_path, g);
  const auto data = io::read_dataset(data_dir);
  if (data.empty()) throw DataError(fmt::format("no .sprf training sequences in {}", data_dir));
  std::vector<FeatureSequence> val;
  if (!val_dir.empty()) val = io::read_dataset(val_dir);
  spdlog::info("training on {} sequences ({} validation), seed {}", data.size(), val.size(), cfg.train.seed);
  auto result = train(data, cfg.model, cfg.train, val, [](const EpochRecord& r) {
    spdlog::info("epoch {:>4}  lr {:.3e}  loss {:.5f}  train acc {:.2f}", r.epoch, r.lr, r.total_loss,
                 r.train_accuracy);
  });
  save_checkpoint(out, result.model);
  if (history.empty()) history = out + ".history.csv";
  result.history.write_csv(history);
  const auto& last = result.history.epochs.back();
  std::cout << fmt::format("trained {} epochs ({} steps), final train accuracy {:.2f}%{}\n",
                           result.history.epochs.size(), result.history.steps, last.train_accuracy,
                           result.history.reached_target ? " (target reached)" : "");
  std::cout << fmt::format("checkpoint: {}\nhistory: {}\n", out, history);
  return kOk;
}

int cmd_predict(const std::string& checkpoint, const std::string& features, const std::string& out, std::size_t stage) {
  const Model model = load_checkpoint(checkpoint);
  const FeatureSequence seq = io::read_features(features);
  if (seq.dim() != model.config().input_dim) {
    throw DataError(fmt::format("feature dimension mismatch: checkpoint expects D={}, {} has D={}",
                                model.config().input_dim, features, seq.dim()));
  }
  const Prediction pred = predict(model, seq.features, stage);
  io::PredictionRows rows;
  const fs::path labels = io::labels_path_for(features);
  if (fs::exists(labels)) {
    rows.truth = io::read_labels(labels);
    if (rows.truth.size() != seq.length()) {
      throw DataError(fmt::format("{} has {} labels for {} frames", labels.string(), rows.truth.size(), seq.length()));
    }
  } else {
    rows.truth.assign(seq.length(), -1);
  }
  rows.pred = pred.labels;
  const std::size_t classes = pred.probs.cols();
  for (std::size_t t = 0; t < seq.length(); ++t) {
    const auto row = pred.probs.data().subspan(t * classes, classes);
    rows.probs.emplace_back(row.begin(), row.end());
  }
  io::write_predictions(out, rows);
  std::cout << fmt::format("wrote {} predictions to {}\n", rows.pred.size(), out);
  return kOk;
}

int cmd_eval(const std::vector<std::string>& preds, const std::vector<std::string>& labels, double fps,
             bool relaxed, double window_seconds, std::size_t classes, const std::string& csv_out,
             const std::string& svg_out) {
  if (!labels.empty() && labels.size() != preds.size()) {
    throw UsageError(fmt::format("{} prediction files but {} label files", preds.size(), labels.size()));
  }
  std::vector<metrics::VideoMetrics> standard, relaxed_reports;
  std::vector<std::pair<std::string, std::vector<int>>> tracks;
  std::string ribbons;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto rows = io::read_predictions(preds[i]);
    const std::vector<int> gt = labels.empty() ? rows.truth : io::read_labels(labels[i]);
    if (gt.size() != rows.pred.size()) {
      throw DataError(fmt::format("{}: {} predictions but {} labels", preds[i], rows.pred.size(), gt.size()));
    }
    for (int l : gt) {
      if (l < 0) throw DataError(preds[i] + ": ground truth missing; pass --labels");
    }
    std::size_t n = classes;
    if (n == 0) n = rows.probs.empty() ? 0 : rows.probs[0].size();
    for (int l : gt) n = std::max(n, static_cast<std::size_t>(l) + 1);
    for (int l : rows.pred) n = std::max(n, static_cast<std::size_t>(l) + 1);
    const std::string id = fs::path(preds[i]).stem().string();
    auto m = metrics::evaluate(rows.pred, gt, n, metrics::Protocol::standard, fps, window_seconds);
    m.video_id = id;
    standard.push_back(m);
    if (relaxed) {
      auto r = metrics::evaluate(rows.pred, gt, n, metrics::Protocol::relaxed, fps, window_seconds);
      r.video_id = id;
      relaxed_reports.push_back(r);
    }
    ribbons += fmt::format("{}\n  truth {}\n  pred  {}\n", id, metrics::ribbon_text(gt), metrics::ribbon_text(rows.pred));
    tracks.emplace_back(id + " gt", gt);
    tracks.emplace_back(id + " pred", rows.pred);
  }
  std::cout << metrics::format_report(standard, "Standard metrics (%)");
  if (relaxed) {
    std::cout << '\n' << metrics::format_report(relaxed_reports, fmt::format("Relaxed metrics (%), {} s window", window_seconds));
  }
  std::cout << "\nSegment ribbons\n" << ribbons;
  if (!csv_out.empty()) {
    std::ofstream f(csv_out);
    if (!f) throw DataError("cannot write " + csv_out);
    f << metrics::report_csv(metrics::aggregate(relaxed ? relaxed_reports : standard));
  }
  if (!svg_out.empty()) {
    std::size_t n = classes;
    for (const auto& [name, t] : tracks) {
      for (int l : t) n = std::max(n, static_cast<std::size_t>(l) + 1);
    }
    std::ofstream f(svg_out);
    if (!f) throw DataError("cannot write " + svg_out);
    f << metrics::ribbon_svg(tracks, n);
  }
  return kOk;
}

int cmd_selfcheck(bool inject_fault) {
  SelfcheckOptions opt;
  opt.corrupt_kernel = inject_fault;
  bool all = true;
  for (const auto& r : run_selfcheck(opt)) {
    std::cout << fmt::format("[{}] {} ({})\n", r.passed ? "PASS" : "FAIL", r.name, r.detail);
    all = all && r.passed;
  }
  std::cout << (all ? "selfcheck: all checks passed\n" : "selfcheck: FAILED\n");
  return all ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sprm: multi-stage state-space temporal model for surgical phase recognition"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Global seed (SPRM_SEED overrides)");
  app.add_flag("-v,--verbose", g.verbose, "Debug logging");
  app.add_flag("-q,--quiet", g.quiet, "Only warnings and errors");

  std::string config_path, out_dir, data_dir, val_dir, out, history, checkpoint, features, csv_out, svg_out;
  std::size_t count = 10, stage = 0, classes = 0;
  double fps = 1.0, window_seconds = 10.0;
  bool relaxed = false, inject_fault = false;
  std::vector<std::string> preds, labels;

  auto* gen = app.add_subcommand("gen-data", "Write synthetic feature and label files");
  gen->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  gen->add_option("--out-dir", out_dir, "Output directory")->required();
  gen->add_option("--count", count, "Number of sequences")->check(CLI::PositiveNumber);

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  tr->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  tr->add_option("--data-dir", data_dir, "Directory of .sprf training sequences")->required();
  tr->add_option("--val-dir", val_dir, "Optional validation directory");
  tr->add_option("--out", out, "Checkpoint path")->required();
  tr->add_option("--history", history, "History CSV (default <out>.history.csv)");

  auto* pr = app.add_subcommand("predict", "Write per-frame predictions for one feature file");
  pr->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  pr->add_option("--features", features, ".sprf feature file")->required();
  pr->add_option("--out", out, "Predictions CSV")->required();
  pr->add_option("--stage", stage, "1-based stage whose head is used (default: last)");

  auto* ev = app.add_subcommand("eval", "Score prediction files");
  ev->add_option("--pred", preds, "Predictions CSV files")->required();
  ev->add_option("--labels", labels, "Label CSVs, one per prediction file (default: the 'true' column)");
  ev->add_option("--fps", fps, "Frames per second of the labels")->check(CLI::PositiveNumber);
  ev->add_flag("--relaxed", relaxed, "Also report the boundary-tolerant protocol");
  ev->add_option("--window-seconds", window_seconds, "Relaxed tolerance window in seconds");
  ev->add_option("--classes", classes, "Number of phases (default: from the file)");
  ev->add_option("--csv", csv_out, "Write aggregate metric,mean,std CSV");
  ev->add_option("--ribbon-svg", svg_out, "Write segment ribbons as SVG");

  auto* sc = app.add_subcommand("selfcheck", "Run the embedded invariant suite");
  sc->add_flag("--inject-fault", inject_fault, "Corrupt the SSM kernel (test hook)")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  spdlog::set_level(g.verbose ? spdlog::level::debug : g.quiet ? spdlog::level::warn : spdlog::level::info);
  spdlog::set_pattern("[%l] %v");
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (gen->parsed()) return cmd_gen_data(g, config_path, out_dir, count);
    if (tr->parsed()) return cmd_train(g, config_path, data_dir, val_dir, out, history);
    if (pr->parsed()) return cmd_predict(checkpoint, features, out, stage);
    if (ev->parsed()) return cmd_eval(preds, labels, fps, relaxed, window_seconds, classes, csv_out, svg_out);
    if (sc->parsed()) return cmd_selfcheck(inject_fault);
  } catch (const InternalError& e) {
    spdlog::error("{}", e.what());
    return kCheckFailed;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return kCheckFailed;
  }
  return kUsage;
}
