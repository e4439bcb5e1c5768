#include "radarvel/selfsup.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace radarvel {

void SelfSupConfig::validate() const {
  if (!(eps_conf > 0.0 && eps_conf <= 1.0)) throw ValidationError("eps_conf must lie in (0, 1]");
  if (!(dt_gap > 0.0)) throw ValidationError("dt_gap must be positive");
  if (c_vel < 0.0) throw ValidationError("c_vel must be non-negative");
  if (!(max_match_distance > 0.0)) throw ValidationError("max_match_distance must be positive");
}

std::optional<PseudoLabel> doppler_pseudo_label(const OBB& gt, const Frame& frame,
                                                const std::vector<Pose2D>& sensors, int box_id) {
  const RadarPoint* best = nullptr;
  for (const auto& scan : frame.scans)
    for (const auto& p : scan.points)
      if (point_in_obb(p.pos, gt) && (!best || std::abs(p.vr) > std::abs(best->vr))) best = &p;
  if (!best) return std::nullopt;

  Vec2 los(std::cos(best->azimuth), std::sin(best->azimuth));
  double best_err = std::numeric_limits<double>::infinity();
  for (const auto& s : sensors) {
    const Vec2 rel = s.inverse().apply(Vec2(best->pos.x(), best->pos.y()));
    const double err = std::abs(normalize_angle(std::atan2(rel.y(), rel.x()) - best->azimuth));
    if (err < best_err) {
      best_err = err;
      los = s.rotate(Vec2(std::cos(best->azimuth), std::sin(best->azimuth)));
    }
  }
  const Vec2 heading(std::cos(gt.yaw), std::sin(gt.yaw));
  const double proj = heading.dot(los);
  Vec2 v = std::abs(proj) >= 0.1 ? Vec2(best->vr / proj * heading) : Vec2(best->vr * heading);
  const double speed = v.norm();
  if (speed > 50.0) v *= 50.0 / speed;
  return PseudoLabel{box_id, v};
}

std::vector<int> confident_indices(const std::vector<OBB>& boxes, double eps_conf) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < boxes.size(); ++i)
    if (boxes[i].score_bg < eps_conf) idx.push_back(static_cast<int>(i));
  return idx;
}

std::vector<OBB> filter_confident(const std::vector<OBB>& boxes, double eps_conf) {
  std::vector<OBB> out;
  for (int i : confident_indices(boxes, eps_conf)) out.push_back(boxes[i]);
  return out;
}

MatchSet match_boxes(const std::vector<OBB>& a, const std::vector<OBB>& b, double max_distance) {
  MatchSet m;
  if (a.empty() || b.empty()) return m;
  std::vector<Match> all;
  all.reserve(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double d = bev_distance(a[i], b[j]);
      if (d <= max_distance) all.push_back({static_cast<int>(i), static_cast<int>(j), d});
    }
  std::sort(all.begin(), all.end(), [](const Match& x, const Match& y) {
    return std::tie(x.distance, x.a, x.b) < std::tie(y.distance, y.a, y.b);
  });
  const std::size_t limit = std::min(a.size(), b.size());
  std::vector<char> used_a(a.size(), 0), used_b(b.size(), 0);
  for (const auto& p : all) {
    if (m.pairs.size() == limit) break;
    if (used_a[p.a] || used_b[p.b]) continue;
    used_a[p.a] = used_b[p.b] = 1;
    m.pairs.push_back(p);
  }
  return m;
}

VelocityLoss velocity_loss(const std::vector<OBB>& vel_boxes, const std::vector<OBB>& det_boxes,
                           const SelfSupConfig& cfg) {
  VelocityLoss out;
  out.vel_grad.assign(vel_boxes.size(), Vec2::Zero());
  out.center_grad.assign(vel_boxes.size(), Vec2::Zero());

  std::vector<OBB> updated;
  updated.reserve(vel_boxes.size());
  for (const auto& b : vel_boxes) updated.push_back(update_box(b, cfg.dt_gap));
  const std::vector<int> ia = confident_indices(updated, cfg.eps_conf);
  const std::vector<int> ib = confident_indices(det_boxes, cfg.eps_conf);
  std::vector<OBB> a, b;
  for (int i : ia) a.push_back(updated[i]);
  for (int j : ib) b.push_back(det_boxes[j]);

  const MatchSet local = match_boxes(a, b, cfg.max_match_distance);
  if (local.pairs.empty()) return out;
  out.no_matches = false;
  const double scale = cfg.c_vel / static_cast<double>(local.pairs.size());
  double sum = 0.0;
  for (const auto& p : local.pairs) {
    const int i = ia[p.a], j = ib[p.b];
    out.matches.pairs.push_back({i, j, p.distance});
    sum += p.distance;
    if (p.distance < 1e-9) continue;
    const Vec2 diff(updated[i].center.x() - det_boxes[j].center.x(),
                    updated[i].center.y() - det_boxes[j].center.y());
    const Vec2 unit = diff / p.distance;
    out.center_grad[i] = scale * unit;
    out.vel_grad[i] = scale * cfg.dt_gap * unit;
  }
  out.value = scale * sum;
  return out;
}

}  // namespace radarvel
