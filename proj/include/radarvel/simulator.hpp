#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "radarvel/core.hpp"

namespace radarvel {

using Rng = std::mt19937_64;

/// Independent stream for item `index` of a run seeded with `seed`.
Rng make_stream(std::uint64_t seed, std::uint64_t index);

class DegenerateGeometry : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class OutOfScenario : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Unicycle motion: constant speed along the heading, constant yaw rate.
/// Heading equals the pose yaw, so a zero-speed trajectory is stationary.
struct Trajectory {
  Pose2D anchor_pose;
  double anchor_time = 0.0;
  double speed = 0.0;
  double yaw_rate = 0.0;

  Pose2D pose(double t) const;
  Vec2 velocity(double t) const;
};

struct ObjectTrack {
  int id = 0;
  double length = 4.5;
  double width = 1.9;
  double height = 1.6;
  Trajectory trajectory;
  double reflectivity = 4.0;  // Poisson rate per sensor and scan
};

struct SensorConfig {
  Pose2D mount;  // in the ego frame
  double fov = 2.0 * kPi / 3.0;
  double max_range = 60.0;
  double pos_noise_sigma = 0.15;
  double vr_noise_sigma = 0.2;
  double dropout_prob = 0.1;
};

/// Front, two front corners and two rear corners.
std::vector<SensorConfig> default_sensors();

struct PopulationSpec {
  int radial = 2;
  int tangential = 2;
  int stationary = 2;
  double speed_min = 3.0;
  double speed_max = 12.0;
  double max_yaw_rate = 0.0;
  double reflectivity = 4.0;
  // Objects are placed in the square |x|, |y| <= spawn_extent of the ego
  // frame at t_ref and must stay there over the whole observation window.
  double spawn_extent = 14.0;
  double min_range = 4.0;
  double min_separation = 6.0;
  int clutter_count = 40;
  double clutter_detect_prob = 0.3;
};

struct ScenarioConfig {
  double duration = 2.0;
  double scan_period = 1.0 / 13.0;
  double ego_speed = 5.0;
  double ego_yaw_rate = 0.0;
  int n_scans = 7;
  double dt_gap = 0.6;
  PopulationSpec population;
  std::vector<SensorConfig> sensors = default_sensors();
  bool rigid_body_rotation = false;  // add yaw-rate term to point velocity
  std::uint64_t seed = 1;

  void validate() const;
};

struct Scenario {
  ScenarioConfig config;
  Trajectory ego;
  std::vector<ObjectTrack> objects;
  std::vector<Vec3> clutter;  // static world reflectors
};

/// Random scene whose objects are observable in the window
/// [t_ref - dt_gap - (n_scans - 1) * scan_period, t_ref].
Scenario make_scenario(const ScenarioConfig& cfg, double t_ref, Rng& rng);

struct DopplerResult {
  double vr_raw = 0.0;
  double vr_comp = 0.0;
};

/// Radial velocities in the world frame; positive means receding.
DopplerResult doppler(const Vec3& point_pos, const Vec2& point_vel,
                      const Pose2D& sensor_world_pose,
                      const Vec2& sensor_world_vel);

/// Velocity of a surface point of an object (world frame).
Vec2 surface_velocity(const ObjectTrack& obj, double t, const Vec2& world_point,
                      bool rigid_body_rotation);

/// Reflections of one object seen by one sensor at time t. Positions are in
/// the ego frame at time t; dt is left at 0 for the caller.
std::vector<RadarPoint> sample_reflections(const ObjectTrack& obj, double t,
                                           const SensorConfig& sensor,
                                           const Pose2D& ego_pose,
                                           const Vec2& ego_vel, Rng& rng,
                                           bool rigid_body_rotation = false);

/// Ground-truth box of an object at time t in the ego frame at t_frame.
OBB object_box(const ObjectTrack& obj, double t, const Pose2D& frame_pose);

/// n_scans scans ending at t_ref, compensated into the ego frame at
/// `expressed_at` (defaults to t_ref). Labels are the boxes at t_ref.
Frame generate_frame(const Scenario& scenario, double t_ref, int n_scans,
                     Rng& rng);
Frame generate_frame(const Scenario& scenario, double t_ref, int n_scans,
                     Rng& rng, double expressed_at);

struct FramePair {
  Frame vel;  // unlabelled, t_ref - dt_gap, expressed in the det ego frame
  Frame det;  // labelled, t_ref

  bool operator==(const FramePair&) const = default;
};

FramePair generate_frame_pair(const Scenario& scenario, double t_ref,
                              double dt_gap, int n_scans, Rng& rng);

// ---------------------------------------------------------------------------
// Dataset files

struct FramePairRecord {
  double t_ref = 0.0;
  Pose2D ego_pose;
  FramePair pair;

  bool operator==(const FramePairRecord&) const = default;
};

struct SplitSpec {
  int n_pairs = 100;
  double train_fraction = 0.8;
};

/// Rounds every float to the 9 significant digits used on disk.
double quantize9(double v);
FramePairRecord quantize(const FramePairRecord& rec);

std::string serialize_record(const FramePairRecord& rec);
FramePairRecord parse_record(const std::string& line);

void write_records(const std::filesystem::path& path,
                   const std::vector<FramePairRecord>& records);
std::vector<FramePairRecord> read_records(const std::filesystem::path& path);

/// Record `index` of the dataset for this scenario config (quantized).
FramePairRecord make_record(const ScenarioConfig& cfg, std::uint64_t index);

/// Writes train.jsonl, val.jsonl and scenario.json into out_dir.
void make_dataset(const ScenarioConfig& cfg, const SplitSpec& split,
                  const std::filesystem::path& out_dir);

struct Dataset {
  ScenarioConfig scenario;
  std::vector<FramePairRecord> train;
  std::vector<FramePairRecord> val;
};

Dataset load_dataset(const std::filesystem::path& dir);

/// The dataset make_dataset would write, as load_dataset would read it back.
Dataset build_dataset(const ScenarioConfig& cfg, const SplitSpec& split);

void to_json(nlohmann::json& j, const ScenarioConfig& cfg);
void from_json(const nlohmann::json& j, ScenarioConfig& cfg);
ScenarioConfig load_scenario_config(const std::filesystem::path& path);

}  // namespace radarvel
