#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "radarvel/heads.hpp"
#include "radarvel/model.hpp"
#include "radarvel/optim.hpp"
#include "radarvel/selfsup.hpp"
#include "radarvel/simulator.hpp"

namespace radarvel {

/// Parameters updated by the velocity step.
enum class GradientScope {
  kVelocityBackbone,  // everything except the class and box output convs
  kFull,              // also the box output, through the velocity-step box centers
  kVelocityHead,      // the velocity output conv only
};

/// Source of the velocity targets during phase 1.
enum class VelocitySupervision {
  kSelfSupervised,  // Doppler pseudo-labels, then the self-supervised phase 2
  kLabel,           // ground-truth velocities in every detection step, no velocity step
};

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  SelfSupConfig selfsup;
  AdamConfig adam;
  int phase1_epochs = 15;
  int phase2_epochs = 15;
  double lr_phase1 = 1e-3;
  double lr_phase2 = 0.5e-3;
  double augment_deg = 5.0;
  bool use_vr_pretrain = true;
  VelocitySupervision supervision = VelocitySupervision::kSelfSupervised;
  GradientScope gradient_scope = GradientScope::kVelocityBackbone;
  double nms_radius = 2.0;
  double proposal_threshold = 0.05;  // decode pre-threshold; below any confidence cut
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
/// Keys are optional; the flat extension toggles (n_scans, use_vr_map, ...)
/// override the nested "model" object.
void from_json(const nlohmann::json& j, TrainConfig& cfg);
TrainConfig load_train_config(const std::filesystem::path& path);

std::string to_string(GradientScope s);
std::string to_string(VelocitySupervision s);

/// The newest n scans of a frame.
Frame keep_newest_scans(const Frame& frame, int n);

/// Sensor mounts rotated with the frame by `angle`.
std::vector<Pose2D> rotated_mounts(const std::vector<SensorConfig>& sensors, double angle);

/// Output gradients of a velocity loss, routed to the cells the velocity-step
/// detections were decoded from; `through_centers` also feeds the center
/// gradient into the box offsets.
template <typename T>
OutputGrads<T> velocity_output_grads(const DenseOutput<T>& out, const std::vector<Detection>& dets,
                                     const VelocityLoss& vl, bool through_centers) {
  auto g = OutputGrads<T>::zeros_like(out);
  const std::size_t n = g.vel.plane();
  const double cell = out.geometry.cell;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const std::size_t c = static_cast<std::size_t>(dets[i].cell);
    g.vel.v[c] += static_cast<T>(vl.vel_grad[i].x());
    g.vel.v[n + c] += static_cast<T>(vl.vel_grad[i].y());
    if (through_centers) {
      g.box.v[c] += static_cast<T>(vl.center_grad[i].x() * cell);
      g.box.v[n + c] += static_cast<T>(vl.center_grad[i].y() * cell);
    }
  }
  return g;
}

struct StepStats {
  LossBreakdown det;
  double l_vel = 0.0;
  int matches = 0;
  bool updated = false;
};

struct EpochMetrics {
  int epoch = 0;  // counted across both phases, starting at 1
  std::string phase;
  double l_cls = 0.0, l_box = 0.0, l_vr = 0.0, l_vel = 0.0;
  double match_count_mean = 0.0;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows);

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<SensorConfig> sensors);
  /// Continues from a checkpoint (parameters, optimizer state, epoch).
  Trainer(TrainConfig cfg, std::vector<SensorConfig> sensors, const Checkpoint& from);

  const TrainConfig& config() const { return cfg_; }
  const Detector<float>& detector() const { return det_; }
  const ModelParams<float>& params() const { return params_; }
  ModelParams<float>& params() { return params_; }
  const std::vector<EpochMetrics>& metrics() const { return metrics_; }
  int epoch() const { return epoch_; }
  Checkpoint checkpoint(const std::string& phase) const;

  /// Supervised step on the labelled frame; `with_vr` adds the velocity
  /// regression against pseudo-labels or ground truth.
  StepStats detection_step(const FramePairRecord& rec, double angle, bool with_vr, double lr);
  /// Self-supervised step on the unlabelled frame against the detections of
  /// the labelled frame (both rotated by `angle`).
  StepStats velocity_step(const FramePairRecord& rec, double angle, double lr);

  using EpochCallback = std::function<void(const EpochMetrics&)>;
  void train_phase1(const std::vector<FramePairRecord>& train, const EpochCallback& cb = {});
  void train_phase2(const std::vector<FramePairRecord>& train, const EpochCallback& cb = {});

  /// Velocity targets per label of a rotated labelled frame.
  std::vector<std::optional<Vec2>> velocity_targets(const Frame& det_rotated, double angle) const;

 private:
  std::vector<char> scope_mask(bool velocity_step) const;
  double draw_angle(Rng& rng) const;

  TrainConfig cfg_;
  std::vector<SensorConfig> sensors_;
  Detector<float> det_;
  ModelParams<float> params_;
  AdamState<float> adam_;
  std::vector<float> grads_;
  std::vector<EpochMetrics> metrics_;
  int epoch_ = 0;
};

/// Phase 1 (+ phase 2 for the self-supervised method); checkpoints and the
/// metrics log go to out_dir when it is non-empty.
struct TrainResult {
  Checkpoint phase1;
  Checkpoint final;
  std::vector<EpochMetrics> metrics;
};

TrainResult train_model(const TrainConfig& cfg, const Dataset& data,
                        const std::filesystem::path& out_dir = {},
                        const Trainer::EpochCallback& on_epoch = {});

}  // namespace radarvel
