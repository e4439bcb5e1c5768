#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "radarvel/core.hpp"
#include "radarvel/model.hpp"
#include "radarvel/optim.hpp"
#include "radarvel/simulator.hpp"
#include "radarvel/training.hpp"

namespace radarvel {

struct EvalConfig {
  std::vector<double> thresholds{0.5, 1.0, 2.0, 4.0};
  double ave_threshold = 2.0;
  double min_recall = 0.1;
  double min_precision = 0.1;
  double score_threshold = 0.05;  // decode threshold of the evaluated detections
  double nms_radius = 2.0;
  double tangential_deg = 60.0;
  double radial_deg = 30.0;
  double min_speed = 0.5;  // GT slower than this belongs to neither motion subset

  void validate() const;
};

struct EvalMatch {
  std::vector<std::pair<int, int>> tp;  // (prediction, ground truth)
  std::vector<int> fp;
  std::vector<int> fn;
};

/// Predictions in descending score_fg order (ties: lower index) each claim
/// the nearest unclaimed ground truth closer than `threshold`.
EvalMatch match_for_eval(const std::vector<OBB>& preds, const std::vector<OBB>& gts, double threshold);

/// Per-frame predictions and ground truth of one evaluation set.
struct EvalFrame {
  std::vector<OBB> preds;
  std::vector<OBB> gts;
};

/// Normalized area above min_precision of the precision envelope over
/// recall in [min_recall, 1]; 0 without ground truth.
double average_precision(const std::vector<EvalFrame>& frames, double threshold, const EvalConfig& cfg);

struct VelocityPair {
  Vec2 pred;
  Vec2 gt;
};

/// Mean BEV velocity error; absent without true positives.
std::optional<double> average_velocity_error(const std::vector<VelocityPair>& pairs);

enum class MotionClass { kNone, kTangential, kRadial };

/// Classifies a ground-truth box by the angle between its velocity and the
/// line of sight from the ego origin.
MotionClass motion_class(const OBB& gt, const EvalConfig& cfg);

struct EvalReport {
  double ap = 0.0;
  double ap4 = 0.0;
  std::vector<double> ap_per_threshold;
  std::optional<double> ave, ave_tangential, ave_radial;
  int tp = 0, fp = 0, fn = 0;
};

EvalReport evaluate_frames(const std::vector<EvalFrame>& frames, const EvalConfig& cfg);

/// Detections of the checkpointed model on each labelled frame.
std::vector<EvalFrame> predict(const Checkpoint& ckpt, const std::vector<FramePairRecord>& records,
                               const EvalConfig& cfg);
EvalReport evaluate(const Checkpoint& ckpt, const std::vector<FramePairRecord>& records,
                    const EvalConfig& cfg);

struct ReportRow {
  std::string arm;
  EvalReport report;
};

/// arm, AP, AP4.0, AVE, AVE_tangential, AVE_radial, TP, FP, FN; absent
/// values are written as empty fields.
std::string report_csv(const std::vector<ReportRow>& rows);
void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows);

// ---------------------------------------------------------------------------
// Ablations

struct AblationArm {
  std::string name;
  nlohmann::json overrides = nlohmann::json::object();  // merged into the base training config
};

struct AblationGrid {
  nlohmann::json base = nlohmann::json::object();  // training config
  std::vector<AblationArm> arms;
  std::vector<std::uint64_t> seeds{1};
  ScenarioConfig scenario;
  SplitSpec split;
  EvalConfig eval;
};

/// "extensions": no v_r pre-training / no TemporalPillars / no v_r-map /
/// Proposed. "scans": n = 1, 3, 5, 7.
std::vector<AblationArm> preset_arms(const std::string& preset);

AblationGrid load_ablation_grid(const std::filesystem::path& path);

struct ArmResult {
  std::string arm;
  std::vector<EvalReport> per_seed;
  EvalReport median;
};

/// Trains and evaluates every arm for every seed on one dataset per seed;
/// the median over seeds of each metric forms the arm's row.
using ArmCallback = std::function<void(const std::string& arm, std::uint64_t seed, const EvalReport& report)>;
std::vector<ArmResult> run_ablation(const AblationGrid& grid, const ArmCallback& on_arm = {});
std::vector<ReportRow> ablation_rows(const std::vector<ArmResult>& results);

/// Element-wise median over seeds (absent values are skipped).
EvalReport median_report(const std::vector<EvalReport>& reports);

// ---------------------------------------------------------------------------
// Plotting

/// Top-down SVG: points colored by vr, dashed prediction boxes, solid
/// ground-truth boxes, velocity arrows of length arrow_scale * |v|.
std::string plot_bev_svg(const Frame& frame, const std::vector<OBB>& preds, const std::vector<OBB>& gts,
                         double extent = 20.0, double arrow_scale = 0.5);
void plot_bev(const Frame& frame, const std::vector<OBB>& preds, const std::vector<OBB>& gts,
              const std::filesystem::path& out, double extent = 20.0);

}  // namespace radarvel
