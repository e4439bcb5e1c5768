#include "radarvel/core.hpp"

#include <cmath>

namespace radarvel {

double normalize_angle(double angle) {
  double a = std::remainder(angle, 2.0 * kPi);  // [-pi, pi]
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

Vec2 Pose2D::rotate(const Vec2& v) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

Vec2 Pose2D::apply(const Vec2& p) const { return rotate(p) + translation(); }

Vec3 Pose2D::apply(const Vec3& p) const {
  const Vec2 q = apply(Vec2(p.x(), p.y()));
  return {q.x(), q.y(), p.z()};
}

Pose2D Pose2D::compose(const Pose2D& child) const {
  const Vec2 t = apply(child.translation());
  return {t.x(), t.y(), normalize_angle(yaw + child.yaw)};
}

Pose2D Pose2D::inverse() const {
  const Pose2D r{0.0, 0.0, -yaw};
  const Vec2 t = -r.rotate(translation());
  return {t.x(), t.y(), normalize_angle(-yaw)};
}

OBB make_obb(const Vec3& center, double length, double width, double height,
             double yaw, const Vec2& vel, double score_fg) {
  if (!(length > 0.0 && width > 0.0 && height > 0.0))
    throw ValidationError("box dimensions must be positive");
  if (!(score_fg >= 0.0 && score_fg <= 1.0))
    throw ValidationError("score_fg must lie in [0, 1]");
  OBB b;
  b.center = center;
  b.length = length;
  b.width = width;
  b.height = height;
  b.yaw = normalize_angle(yaw);
  b.vel = vel;
  b.score_fg = score_fg;
  b.score_bg = 1.0 - score_fg;
  return b;
}

std::size_t Frame::point_count() const {
  std::size_t n = 0;
  for (const auto& s : scans) n += s.points.size();
  return n;
}

OBB update_box(const OBB& box, double dt) {
  OBB out = box;
  out.center.x() = box.center.x() + box.vel.x() * dt;
  out.center.y() = box.center.y() + box.vel.y() * dt;
  return out;
}

std::vector<RadarPoint> transform_points(std::span<const RadarPoint> points,
                                         const Pose2D& pose) {
  std::vector<RadarPoint> out(points.begin(), points.end());
  for (auto& p : out) p.pos = pose.apply(p.pos);
  return out;
}

bool point_in_obb(const Vec3& p, const OBB& box) {
  const double dx = p.x() - box.center.x();
  const double dy = p.y() - box.center.y();
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * box.length && std::abs(ly) <= 0.5 * box.width;
}

std::array<Vec2, 4> obb_corners(const OBB& box) {
  const Pose2D pose{box.center.x(), box.center.y(), box.yaw};
  const double hl = 0.5 * box.length, hw = 0.5 * box.width;
  return {pose.apply(Vec2(hl, hw)), pose.apply(Vec2(-hl, hw)),
          pose.apply(Vec2(-hl, -hw)), pose.apply(Vec2(hl, -hw))};
}

Frame rotate_frame(const Frame& frame, double angle) {
  const Pose2D rot{0.0, 0.0, angle};
  Frame out = frame;
  for (auto& scan : out.scans)
    for (auto& p : scan.points) p.pos = rot.apply(p.pos);
  for (auto& b : out.labels) {
    b.center = rot.apply(b.center);
    b.yaw = normalize_angle(b.yaw + angle);
    b.vel = rot.rotate(b.vel);
  }
  return out;
}

double bev_distance(const OBB& a, const OBB& b) {
  return std::hypot(a.center.x() - b.center.x(), a.center.y() - b.center.y());
}

}  // namespace radarvel
