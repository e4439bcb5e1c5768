#include "radarvel/heads.hpp"

#include <algorithm>
#include <numeric>

namespace radarvel {

BoxCode encode_box(const OBB& box, const Vec2& cc, double cell) {
  return {(box.center.x() - cc.x()) / cell,
          (box.center.y() - cc.y()) / cell,
          box.center.z(),
          std::log(box.length),
          std::log(box.width),
          std::log(box.height),
          std::cos(box.yaw),
          std::sin(box.yaw)};
}

OBB decode_box(const BoxCode& c, const Vec2& cc, double cell) {
  OBB b;
  b.center = {cc.x() + c[0] * cell, cc.y() + c[1] * cell, c[2]};
  b.length = std::exp(std::clamp(c[3], -5.0, 5.0));
  b.width = std::exp(std::clamp(c[4], -5.0, 5.0));
  b.height = std::exp(std::clamp(c[5], -5.0, 5.0));
  b.yaw = normalize_angle(std::atan2(c[7], c[6]));
  return b;
}

Targets assign_targets(const std::vector<OBB>& labels, const GridConfig& g,
                       const std::vector<std::optional<Vec2>>& vel_targets) {
  const int H = g.height(), W = g.width();
  const std::size_t n = static_cast<std::size_t>(H) * W;
  Targets t;
  t.geometry = g;
  t.assigned.assign(n, -1);
  t.box = Tensor<double>(kBoxCodeSize, H, W);
  t.vel = Tensor<double>(2, H, W);
  t.positive.assign(n, 0);
  t.has_vel.assign(n, 0);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const Vec2 cc = g.cell_center(r, c);
      const Vec3 p(cc.x(), cc.y(), 0.0);
      int best = -1;
      double best_d = 0.0;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!point_in_obb(p, labels[i])) continue;
        const double d = std::hypot(cc.x() - labels[i].center.x(), cc.y() - labels[i].center.y());
        if (best < 0 || d < best_d) {
          best = static_cast<int>(i);
          best_d = d;
        }
      }
      const std::size_t idx = static_cast<std::size_t>(r) * W + c;
      if (best < 0) continue;
      t.assigned[idx] = best;
      t.positive[idx] = 1;
      ++t.positives;
      const BoxCode code = encode_box(labels[best], cc, g.cell);
      for (int k = 0; k < kBoxCodeSize; ++k) t.box.v[k * n + idx] = code[k];
      if (static_cast<std::size_t>(best) < vel_targets.size() && vel_targets[best]) {
        t.has_vel[idx] = 1;
        t.vel.v[idx] = vel_targets[best]->x();
        t.vel.v[n + idx] = vel_targets[best]->y();
      }
    }
  }
  return t;
}

double focal_term(double p, bool fg, double alpha, double gamma) {
  const double a = fg ? alpha : 1.0 - alpha;
  return -a * std::pow(1.0 - p, gamma) * std::log(p);
}

template <typename T>
double focal_loss(const Tensor<T>& logits, const std::vector<int>& assigned, const LossConfig& cfg,
                  Tensor<T>* grad, double scale) {
  const std::size_t n = logits.plane();
  const double gamma = cfg.focal_gamma;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool fg = assigned[i] >= 0;
    const double bg_logit = static_cast<double>(logits.v[i]);
    const double fg_logit = static_cast<double>(logits.v[n + i]);
    const double z = fg ? fg_logit - bg_logit : bg_logit - fg_logit;
    // log p = -softplus(-z), computed stably.
    const double log_p = -(std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))));
    const double p = std::exp(log_p);
    const double q = 1.0 - p;
    const double alpha = fg ? cfg.focal_alpha : 1.0 - cfg.focal_alpha;
    sum += -alpha * std::pow(q, gamma) * log_p;
    if (grad) {
      // d/dz of -alpha q^gamma log p with dp/dz = p q.
      const double dz = -alpha * (q * std::pow(q, gamma) - gamma * std::pow(q, gamma) * p * log_p);
      const double g = dz * scale / static_cast<double>(n);
      grad->v[n + i] += static_cast<T>(fg ? g : -g);
      grad->v[i] += static_cast<T>(fg ? -g : g);
    }
  }
  return sum / static_cast<double>(n);
}

double smooth_l1(double x, double beta) {
  const double a = std::abs(x);
  return a < beta ? 0.5 * x * x / beta : a - 0.5 * beta;
}

double smooth_l1_grad(double x, double beta) {
  if (std::abs(x) < beta) return x / beta;
  return x > 0.0 ? 1.0 : -1.0;
}

template <typename T>
LossTerm smooth_l1_loss(const Tensor<T>& pred, const Tensor<double>& target,
                        const std::vector<char>& mask, double beta, Tensor<T>* grad, double scale) {
  const std::size_t n = pred.plane();
  const std::size_t cells = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
  LossTerm out;
  if (cells == 0) {
    out.no_positives = true;
    return out;
  }
  const double denom = static_cast<double>(cells) * pred.c;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    for (int k = 0; k < pred.c; ++k) {
      const double x = static_cast<double>(pred.v[k * n + i]) - target.v[k * n + i];
      sum += smooth_l1(x, beta);
      if (grad) grad->v[k * n + i] += static_cast<T>(smooth_l1_grad(x, beta) * scale / denom);
    }
  }
  out.value = sum / denom;
  return out;
}

double combine_detection_loss(double l_box, double l_cls, std::optional<double> l_vr,
                              const LossConfig& cfg) {
  double total = cfg.c_box * l_box + cfg.c_cls * l_cls;
  if (l_vr) total += cfg.c_vr * *l_vr;
  return total;
}

template <typename T>
LossBreakdown detection_loss(const DenseOutput<T>& out, const Targets& targets, const LossConfig& cfg,
                             bool with_velocity, OutputGrads<T>* grads) {
  LossBreakdown b;
  b.cls = focal_loss(out.cls_logits, targets.assigned, cfg, grads ? &grads->cls_logits : nullptr, cfg.c_cls);
  b.box = smooth_l1_loss(out.box, targets.box, targets.positive, cfg.smooth_l1_beta,
                         grads ? &grads->box : nullptr, cfg.c_box)
              .value;
  std::optional<double> vr;
  if (with_velocity) {
    const LossTerm t = smooth_l1_loss(out.vel, targets.vel, targets.has_vel, cfg.smooth_l1_beta,
                                      grads ? &grads->vel : nullptr, cfg.c_vr);
    if (!t.no_positives) vr = t.value;
  }
  b.has_vr = vr.has_value();
  b.vr = vr.value_or(0.0);
  b.total = combine_detection_loss(b.box, b.cls, vr, cfg);
  return b;
}

std::vector<Detection> nms(std::vector<Detection> dets, double radius) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.box.score_fg != b.box.score_fg) return a.box.score_fg > b.box.score_fg;
    return a.cell < b.cell;
  });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (bev_distance(d.box, k.box) < radius) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

template <typename T>
std::vector<Detection> decode_detections(const DenseOutput<T>& out, double score_threshold,
                                         double nms_radius) {
  const std::size_t n = out.cls_prob.plane();
  const int W = out.cls_prob.w;
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = static_cast<double>(out.cls_prob.v[n + i]);
    if (!(s > score_threshold)) continue;
    BoxCode code;
    for (int k = 0; k < kBoxCodeSize; ++k) code[k] = static_cast<double>(out.box.v[k * n + i]);
    const int r = static_cast<int>(i) / W, c = static_cast<int>(i) % W;
    Detection d;
    d.box = decode_box(code, out.geometry.cell_center(r, c), out.geometry.cell);
    d.box.vel = {static_cast<double>(out.vel.v[i]), static_cast<double>(out.vel.v[n + i])};
    d.box.score_fg = s;
    d.box.score_bg = 1.0 - s;
    d.cell = static_cast<int>(i);
    dets.push_back(d);
  }
  return nms(std::move(dets), nms_radius);
}

std::vector<OBB> boxes_of(const std::vector<Detection>& dets) {
  std::vector<OBB> out;
  out.reserve(dets.size());
  for (const auto& d : dets) out.push_back(d.box);
  return out;
}

#define RADARVEL_INSTANTIATE(T)                                                                       \
  template double focal_loss<T>(const Tensor<T>&, const std::vector<int>&, const LossConfig&,        \
                                Tensor<T>*, double);                                                 \
  template LossTerm smooth_l1_loss<T>(const Tensor<T>&, const Tensor<double>&,                        \
                                      const std::vector<char>&, double, Tensor<T>*, double);         \
  template LossBreakdown detection_loss<T>(const DenseOutput<T>&, const Targets&, const LossConfig&,  \
                                           bool, OutputGrads<T>*);                                   \
  template std::vector<Detection> decode_detections<T>(const DenseOutput<T>&, double, double);

RADARVEL_INSTANTIATE(float)
RADARVEL_INSTANTIATE(double)

#undef RADARVEL_INSTANTIATE

}  // namespace radarvel
