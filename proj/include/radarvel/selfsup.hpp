#pragma once

#include <limits>
#include <optional>
#include <vector>

#include "radarvel/core.hpp"

namespace radarvel {

struct SelfSupConfig {
  double eps_conf = 0.5;
  double dt_gap = 0.6;
  double c_vel = 0.05;
  double max_match_distance = std::numeric_limits<double>::infinity();

  void validate() const;
};

struct Match {
  int a = -1;  // index into the first (updated velocity-step) list
  int b = -1;  // index into the second (detection-step) list
  double distance = 0.0;

  bool operator==(const Match&) const = default;
};

struct MatchSet {
  std::vector<Match> pairs;
};

struct PseudoLabel {
  int box_id = -1;
  Vec2 v = Vec2::Zero();
};

/// Doppler velocity target of a labelled box: the in-box point with the
/// largest |vr| is de-projected onto the box heading. `sensors` are the
/// sensor mounts in the frame's coordinates; the sensor of a point is the
/// one whose bearing to it best agrees with the point's azimuth.
std::optional<PseudoLabel> doppler_pseudo_label(const OBB& gt, const Frame& frame,
                                                const std::vector<Pose2D>& sensors, int box_id = -1);

/// Boxes with score_bg strictly below eps_conf, in input order.
std::vector<OBB> filter_confident(const std::vector<OBB>& boxes, double eps_conf);
std::vector<int> confident_indices(const std::vector<OBB>& boxes, double eps_conf);

/// Global greedy matching by ascending BEV center distance (ties: lower a,
/// then lower b), at most min(|a|, |b|) pairs, none beyond max_distance.
MatchSet match_boxes(const std::vector<OBB>& a, const std::vector<OBB>& b,
                     double max_distance = std::numeric_limits<double>::infinity());

struct VelocityLoss {
  double value = 0.0;
  bool no_matches = true;
  MatchSet matches;              // indices into the unfiltered input lists
  std::vector<Vec2> vel_grad;    // d loss / d velocity, per velocity-step box
  std::vector<Vec2> center_grad; // d loss / d center (BEV), per velocity-step box
};

/// Updates the velocity-step boxes by dt_gap, keeps confident boxes on both
/// sides, matches them and returns c_vel times the mean matched distance
/// with its derivative for the matching held fixed.
VelocityLoss velocity_loss(const std::vector<OBB>& vel_boxes, const std::vector<OBB>& det_boxes,
                           const SelfSupConfig& cfg);

}  // namespace radarvel
