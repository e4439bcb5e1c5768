#pragma once

#include <cmath>
#include <vector>

#include "radarvel/simulator.hpp"

namespace radarvel::testing {

inline std::vector<SensorConfig> noiseless_sensors() {
  auto s = default_sensors();
  for (auto& c : s) {
    c.pos_noise_sigma = 0.0;
    c.vr_noise_sigma = 0.0;
    c.dropout_prob = 0.0;
  }
  return s;
}

inline ObjectTrack make_track(int id, const Pose2D& pose, double speed, double anchor_time = 0.0) {
  ObjectTrack o;
  o.id = id;
  o.trajectory.anchor_pose = pose;
  o.trajectory.anchor_time = anchor_time;
  o.trajectory.speed = speed;
  o.reflectivity = 12.0;
  return o;
}

/// Hand-built scene with explicit objects and ego motion, zero sensor noise.
inline Scenario manual_scenario(std::vector<ObjectTrack> objects, double ego_speed, double ego_yaw_rate,
                                std::vector<Vec3> clutter = {}) {
  Scenario sc;
  sc.config.sensors = noiseless_sensors();
  sc.config.ego_speed = ego_speed;
  sc.config.ego_yaw_rate = ego_yaw_rate;
  sc.config.population.clutter_detect_prob = 1.0;
  sc.ego.speed = ego_speed;
  sc.ego.yaw_rate = ego_yaw_rate;
  sc.objects = std::move(objects);
  sc.clutter = std::move(clutter);
  return sc;
}

/// Distance of a BEV point from the perimeter of a box, and whether it lies
/// inside or on the box (tolerance tol).
inline double perimeter_distance(const Vec2& p, const OBB& b) {
  const Vec2 d = p - b.center.head<2>();
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double x = std::abs(c * d.x() + s * d.y()), y = std::abs(-s * d.x() + c * d.y());
  const double hl = 0.5 * b.length, hw = 0.5 * b.width;
  if (x <= hl && y <= hw) return std::min(hl - x, hw - y);
  const double ox = std::max(0.0, x - hl), oy = std::max(0.0, y - hw);
  return std::hypot(ox, oy);
}

}  // namespace radarvel::testing
