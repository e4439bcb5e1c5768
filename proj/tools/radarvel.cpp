#include <cstdio>
#include <exception>
#include <fstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "radarvel/eval.hpp"
#include "radarvel/gradcheck.hpp"
#include "radarvel/training.hpp"

using namespace radarvel;

namespace {

constexpr int kOk = 0;
constexpr int kIoFailure = 1;
constexpr int kValidationFailure = 2;

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

void print_report(const std::string& arm, const EvalReport& r) {
  std::printf("%s: AP=%.4f AP4.0=%.4f AVE=%s AVE_tangential=%s AVE_radial=%s TP=%d FP=%d FN=%d\n", arm.c_str(),
              r.ap, r.ap4, fmt_opt(r.ave).c_str(), fmt_opt(r.ave_tangential).c_str(),
              fmt_opt(r.ave_radial).c_str(), r.tp, r.fp, r.fn);
}

const std::vector<FramePairRecord>& pick_split(const Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  throw ValidationError("split must be 'train' or 'val'");
}

int simulate(const std::string& scenario_path, const std::string& out, int pairs, double train_fraction) {
  std::ifstream in(scenario_path);
  if (!in) throw IoError("cannot open " + scenario_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed scenario config: ") + ex.what());
  }
  ScenarioConfig cfg;
  SplitSpec split;
  try {
    cfg = j.get<ScenarioConfig>();
    if (j.contains("split")) {
      split.n_pairs = j["split"].value("n_pairs", split.n_pairs);
      split.train_fraction = j["split"].value("train_fraction", split.train_fraction);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("bad scenario config: ") + ex.what());
  }
  if (pairs > 0) split.n_pairs = pairs;
  if (train_fraction >= 0.0) split.train_fraction = train_fraction;
  make_dataset(cfg, split, out);
  std::printf("wrote %d frame pairs to %s\n", split.n_pairs, out.c_str());
  return kOk;
}

int train(const std::string& config, const std::string& data_dir, const std::string& out) {
  const TrainConfig cfg = load_train_config(config);
  const Dataset data = load_dataset(data_dir);
  train_model(cfg, data, out, [](const EpochMetrics& m) {
    std::printf("epoch %d (%s) L_cls=%.5f L_box=%.5f L_vr=%.5f L_vel=%.5f matches=%.2f\n", m.epoch,
                m.phase.c_str(), m.l_cls, m.l_box, m.l_vr, m.l_vel, m.match_count_mean);
    std::fflush(stdout);
  });
  std::printf("checkpoints in %s\n", out.c_str());
  return kOk;
}

int eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& report,
         const std::string& split, std::string arm) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset data = load_dataset(data_dir);
  const EvalReport r = evaluate(ckpt, pick_split(data, split), EvalConfig{});
  if (arm.empty()) arm = std::filesystem::path(ckpt_path).stem().string();
  write_report_csv(report, {{arm, r}});
  print_report(arm, r);
  return kOk;
}

int ablate(const std::string& grid_path, const std::string& out) {
  const AblationGrid grid = load_ablation_grid(grid_path);
  const auto results = run_ablation(grid, [](const std::string& arm, std::uint64_t seed, const EvalReport& r) {
    print_report(arm + " seed " + std::to_string(seed), r);
    std::fflush(stdout);
  });
  write_report_csv(out, ablation_rows(results));
  for (const auto& r : results) print_report(r.arm + " median", r.median);
  return kOk;
}

int plot(const std::string& ckpt_path, const std::string& data_dir, int frame, const std::string& split,
         const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset data = load_dataset(data_dir);
  const auto& records = pick_split(data, split);
  if (frame < 0 || frame >= static_cast<int>(records.size()))
    throw ValidationError("frame index " + std::to_string(frame) + " outside the " + split + " split (" +
                          std::to_string(records.size()) + " frame pairs)");
  const FramePairRecord& rec = records[static_cast<std::size_t>(frame)];
  const auto pred = predict(ckpt, {rec}, EvalConfig{});
  const Frame shown = keep_newest_scans(rec.pair.det, ckpt.model.n_scans);
  const double extent = std::max({-ckpt.model.grid.x_min, ckpt.model.grid.x_max, -ckpt.model.grid.y_min,
                                  ckpt.model.grid.y_max});
  plot_bev(shown, pred.front().preds, pred.front().gts, out, extent);
  std::printf("wrote %s (%zu predictions, %zu labels)\n", out.c_str(), pred.front().preds.size(),
              pred.front().gts.size());
  return kOk;
}

int gradcheck(std::uint64_t seed) {
  const auto results = run_gradcheck(seed);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-22s %s max_rel_error=%.3e entries=%zu\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                r.max_rel_error, r.checked);
    ok = ok && r.passed;
  }
  return ok ? kOk : kValidationFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised radar velocity learning: simulation, training, evaluation"};
  app.require_subcommand(1);

  std::string scenario, data_dir, out, config, ckpt, report, grid, split = "val", arm;
  int pairs = 0, frame = 0;
  double train_fraction = -1.0;
  std::uint64_t seed = 1;

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
  sim->add_option("--scenario", scenario, "Scenario config (JSON)")->required();
  sim->add_option("--out", out, "Output directory")->required();
  sim->add_option("--pairs", pairs, "Number of frame pairs (overrides the config)");
  sim->add_option("--train-fraction", train_fraction, "Train share of the pairs (overrides the config)");

  auto* tr = app.add_subcommand("train", "Two-phase training");
  tr->add_option("--config", config, "Training config (JSON)")->required();
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", out, "Checkpoint directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--report", report, "Report CSV")->required();
  ev->add_option("--split", split, "train or val")->capture_default_str();
  ev->add_option("--arm", arm, "Row label (default: checkpoint file stem)");

  auto* ab = app.add_subcommand("ablate", "Train and evaluate an ablation grid");
  ab->add_option("--grid", grid, "Ablation grid (JSON)")->required();
  ab->add_option("--out", out, "Table CSV")->required();

  auto* pl = app.add_subcommand("plot", "Bird's-eye-view SVG of one frame");
  pl->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  pl->add_option("--data", data_dir, "Dataset directory")->required();
  pl->add_option("--frame", frame, "Frame-pair index within the split")->required();
  pl->add_option("--split", split, "train or val")->capture_default_str();
  pl->add_option("--out", out, "SVG file")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--seed", seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidationFailure;
  }

  try {
    if (*sim) return simulate(scenario, out, pairs, train_fraction);
    if (*tr) return train(config, data_dir, out);
    if (*ev) return eval(ckpt, data_dir, report, split, arm);
    if (*ab) return ablate(grid, out);
    if (*pl) return plot(ckpt, data_dir, frame, split, out);
    if (*gc) return gradcheck(seed);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIoFailure;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kValidationFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIoFailure;
  }
  return kValidationFailure;
}
