#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace radarvel {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

inline constexpr double kPi = 3.14159265358979323846;

/// Maps any finite angle to (-pi, pi].
double normalize_angle(double angle);

/// Invalid arguments and violated preconditions throughout the library.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// File system and parse failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One radar reflection. Position is in the ego frame at the frame reference
/// time; vr is ego-motion compensated; dt <= 0 is the offset of the scan
/// time from the frame reference time.
struct RadarPoint {
  Vec3 pos = Vec3::Zero();
  double vr = 0.0;
  double rcs = 0.0;
  double azimuth = 0.0;
  double dt = 0.0;

  bool operator==(const RadarPoint&) const = default;
};

struct Scan {
  std::vector<RadarPoint> points;
  double stamp = 0.0;

  bool operator==(const Scan&) const = default;
};

/// Planar rigid pose. Maps body coordinates to parent coordinates.
struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  Vec2 translation() const { return {x, y}; }
  Vec2 apply(const Vec2& p) const;
  Vec2 rotate(const Vec2& v) const;
  Vec3 apply(const Vec3& p) const;
  Pose2D compose(const Pose2D& child) const;
  Pose2D inverse() const;

  bool operator==(const Pose2D&) const = default;
};

/// Oriented box with planar velocity and two-class scores.
struct OBB {
  Vec3 center = Vec3::Zero();
  double length = 1.0;
  double width = 1.0;
  double height = 1.0;
  double yaw = 0.0;
  Vec2 vel = Vec2::Zero();
  double score_fg = 1.0;
  double score_bg = 0.0;

  bool operator==(const OBB&) const = default;
};

/// Validating constructor: dims must be positive, yaw is normalized and
/// score_bg is set to 1 - score_fg.
OBB make_obb(const Vec3& center, double length, double width, double height,
             double yaw, const Vec2& vel = Vec2::Zero(), double score_fg = 1.0);

struct Frame {
  std::vector<Scan> scans;  // ascending stamps, newest last
  double ref_time = 0.0;
  Pose2D ego_pose;  // world pose of the frame the points are expressed in
  std::vector<OBB> labels;

  bool operator==(const Frame&) const = default;
  std::size_t point_count() const;
};

/// Constant-velocity update: shifts the center by vel * dt, nothing else.
OBB update_box(const OBB& box, double dt);

/// Rigid BEV transform of point positions; z and all scalar features kept.
std::vector<RadarPoint> transform_points(std::span<const RadarPoint> points,
                                         const Pose2D& pose);

/// BEV containment (z ignored), boundary inclusive.
bool point_in_obb(const Vec3& p, const OBB& box);

/// The four BEV corners, counter-clockwise starting at front-left.
std::array<Vec2, 4> obb_corners(const OBB& box);

/// Rotates the whole scene about the ego origin. Radial velocities are
/// invariant under this rotation and are left untouched.
Frame rotate_frame(const Frame& frame, double angle);

double bev_distance(const OBB& a, const OBB& b);

}  // namespace radarvel
