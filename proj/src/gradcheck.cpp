#include "radarvel/gradcheck.hpp"

#include <functional>
#include <numeric>

#include "radarvel/heads.hpp"
#include "radarvel/selfsup.hpp"
#include "radarvel/simulator.hpp"
#include "radarvel/training.hpp"

namespace radarvel {

namespace {

using Vec = std::vector<double>;

Vec random_vec(std::size_t n, Rng& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vec v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Tensor<double> random_tensor(int c, int h, int w, Rng& rng, double scale) {
  Tensor<double> t(c, h, w);
  const Vec v = random_vec(t.size(), rng, scale);
  t.v.assign(v.begin(), v.end());
  return t;
}

template <typename A, typename B>
double dot(const A& a, const B& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Allocates conv parameters in a flat vector.
struct Layout {
  std::size_t size = 0;
  ConvSpec conv(int cin, int cout, int k, int stride) {
    ConvSpec s;
    s.cin = cin;
    s.cout = cout;
    s.k = k;
    s.stride = stride;
    s.w_off = size;
    size += s.weight_count();
    s.b_off = size;
    size += static_cast<std::size_t>(cout);
    return s;
  }
};

// Random linear functional of the graph output; checks d/d(params).
GradCheckResult layer_check(const std::string& name, std::size_t n_params,
                            const std::function<int(Tape<double>&)>& build, Rng& rng,
                            const GradCheckOptions& opt) {
  const Vec params = random_vec(n_params, rng, 0.5);
  Vec weights;
  {
    Tape<double> t(params);
    weights = random_vec(t.value(build(t)).size(), rng, 1.0);
  }
  auto f = [&](const Vec& p) {
    Tape<double> t(p);
    return dot(weights, t.value(build(t)).v);
  };
  Tape<double> t(params);
  const int out = build(t);
  Tensor<double> g = t.value(out);
  g.v.assign(weights.begin(), weights.end());
  t.seed_grad(out, g);
  Vec grads(n_params, 0.0);
  t.backward(grads);
  return check_gradient(name, params, grads, f, opt);
}

std::vector<RadarPoint> random_points(int n, const GridConfig& g, double dt, Rng& rng) {
  std::uniform_real_distribution<double> ux(g.x_min + 0.01, g.x_max - 0.01), uy(g.y_min + 0.01, g.y_max - 0.01);
  std::uniform_real_distribution<double> uvr(-15.0, 15.0), urcs(-10.0, 20.0), uz(0.0, 2.0);
  std::vector<RadarPoint> pts(n);
  for (auto& p : pts) {
    p.pos = {ux(rng), uy(rng), uz(rng)};
    p.vr = uvr(rng);
    p.rcs = urcs(rng);
    p.azimuth = std::atan2(p.pos.y(), p.pos.x());
    p.dt = dt;
  }
  return pts;
}

Frame random_frame(const ModelConfig& cfg, Rng& rng) {
  Frame f;
  for (int k = 0; k < cfg.n_scans; ++k) {
    Scan s;
    s.stamp = -0.077 * (cfg.n_scans - 1 - k);
    s.points = random_points(40, cfg.grid, s.stamp, rng);
    f.scans.push_back(std::move(s));
  }
  f.labels = {make_obb({1.5, 0.5, 0.8}, 3.0, 2.0, 1.6, 0.4, {3.0, 1.0}),
              make_obb({-2.0, -1.5, 0.8}, 2.5, 1.8, 1.5, -1.2, {-1.0, 2.0})};
  return f;
}

}  // namespace

ModelConfig gradcheck_model() {
  ModelConfig m;
  m.grid.x_min = -4.0;
  m.grid.x_max = 4.0;
  m.grid.y_min = -4.0;
  m.grid.y_max = 4.0;
  m.grid.cell = 0.5;
  m.grid.max_points_per_pillar = 4;
  m.n_scans = 2;
  m.pillar_channels = 2;
  m.stem_channels = 3;
  m.stage_blocks = {1, 1, 1, 1};
  m.stage_channels = {3, 4, 4, 4};
  m.fpn_channels = 3;
  m.head_channels = 3;
  m.shortcut_channels = 2;
  return m;
}

std::vector<GradCheckResult> run_gradcheck(std::uint64_t seed, const GradCheckOptions& opt) {
  Rng rng = make_stream(seed, 0x6eadc4ecULL);
  std::vector<GradCheckResult> out;

  // Individual tape ops over a constant input.
  const Tensor<double> x = random_tensor(3, 6, 6, rng, 1.0);
  const Tensor<double> x_odd = random_tensor(2, 5, 7, rng, 1.0);
  {
    for (auto [name, k, stride] : {std::tuple{"conv1x1", 1, 1}, std::tuple{"conv1x1_stride2", 1, 2},
                                   std::tuple{"conv3x3", 3, 1}, std::tuple{"conv3x3_stride2", 3, 2}}) {
      Layout l;
      const ConvSpec c = l.conv(3, 4, k, stride);
      out.push_back(layer_check(name, l.size, [&](Tape<double>& t) { return t.conv(t.constant(x), c); }, rng, opt));
    }
    Layout l;
    const ConvSpec c = l.conv(2, 3, 3, 2);
    out.push_back(layer_check("conv3x3_stride2_odd", l.size,
                              [&](Tape<double>& t) { return t.conv(t.constant(x_odd), c); }, rng, opt));
  }
  {
    Layout l;
    const ConvSpec c = l.conv(3, 4, 3, 1);
    out.push_back(layer_check("relu", l.size,
                              [&](Tape<double>& t) { return t.relu(t.conv(t.constant(x), c)); }, rng, opt));
  }
  {
    Layout l;
    const ConvSpec a = l.conv(3, 4, 3, 1), b = l.conv(3, 4, 1, 1);
    out.push_back(layer_check("add", l.size,
                              [&](Tape<double>& t) {
                                const int in = t.constant(x);
                                return t.add(t.conv(in, a), t.conv(in, b));
                              },
                              rng, opt));
  }
  {
    Layout l;
    const ConvSpec a = l.conv(3, 4, 3, 1), b = l.conv(3, 1, 3, 1);
    out.push_back(layer_check("add_broadcast", l.size,
                              [&](Tape<double>& t) {
                                const int in = t.constant(x);
                                return t.add_broadcast(t.conv(in, a), t.conv(in, b));
                              },
                              rng, opt));
  }
  {
    Layout l;
    const ConvSpec a = l.conv(3, 2, 3, 2);
    out.push_back(layer_check("upsample2", l.size,
                              [&](Tape<double>& t) { return t.upsample2(t.conv(t.constant(x), a)); }, rng, opt));
  }
  {
    Layout l;
    const ConvSpec a = l.conv(3, 2, 3, 1);
    out.push_back(layer_check("maxpool2", l.size,
                              [&](Tape<double>& t) { return t.maxpool2(t.conv(t.constant(x), a)); }, rng, opt));
  }
  {
    Layout l;
    const ConvSpec a = l.conv(3, 2, 1, 1), b = l.conv(3, 3, 3, 1), c = l.conv(5, 2, 3, 1);
    out.push_back(layer_check("concat", l.size,
                              [&](Tape<double>& t) {
                                const int in = t.constant(x);
                                return t.conv(t.concat({t.conv(in, a), t.conv(in, b)}), c);
                              },
                              rng, opt));
  }
  {
    GridConfig g;
    g.x_min = g.y_min = -2.0;
    g.x_max = g.y_max = 2.0;
    g.cell = 0.5;
    g.max_points_per_pillar = 3;
    const PillarBuckets b0 = bucketize(random_points(30, g, 0.0, rng), g);
    const PillarBuckets b1 = bucketize(random_points(30, g, -0.077, rng), g);
    PillarSpec spec;
    spec.channels = 3;
    spec.total_channels = 6;
    spec.w_off = 0;
    spec.b_off = static_cast<std::size_t>(kPillarFeatures) * 3;
    out.push_back(layer_check("pillars", spec.b_off + 3,
                              [&](Tape<double>& t) {
                                return t.pillars(spec, {{&b0, 0}, {&b1, 3}}, g.height(), g.width());
                              },
                              rng, opt));
  }

  // Whole detector in double precision.
  const ModelConfig mc = gradcheck_model();
  const Detector<double> det(mc);
  ModelParams<double> base = det.init(seed);
  {
    const Vec noise = random_vec(base.size(), rng, 0.2);
    for (std::size_t i = 0; i < base.size(); ++i) base.values[i] += noise[i];
  }
  const Frame det_frame = random_frame(mc, rng);
  Frame vel_frame = random_frame(mc, rng);
  vel_frame.labels.clear();
  const DetectorInput det_in = prepare_input(det_frame, mc);
  const DetectorInput vel_in = prepare_input(vel_frame, mc);
  const GridConfig og = mc.output_grid();
  const Targets targets = assign_targets(det_frame.labels, og, {Vec2(3.0, 1.0), Vec2(-1.0, 2.0)});
  const LossConfig lc;

  auto forward = [&](const Vec& p, const DetectorInput& in) {
    ModelParams<double> mp;
    mp.values = p;
    return det.forward(in, mp);
  };
  // Wraps a loss over the dense outputs: value(out, grads*) -> scalar.
  using OutLoss = std::function<double(const DenseOutput<double>&, OutputGrads<double>*)>;
  auto model_check = [&](const std::string& name, const DetectorInput& in, const OutLoss& loss) {
    ModelParams<double> mp = base;
    auto pass = det.forward(in, mp);
    auto g = OutputGrads<double>::zeros_like(pass->out);
    loss(pass->out, &g);
    Vec grads;
    det.backward(*pass, g, grads);
    auto f = [&](const Vec& p) { return loss(forward(p, in)->out, nullptr); };
    out.push_back(check_gradient(name, base.values, grads, f, opt));
  };

  {
    const auto probe = det.forward(det_in, base);
    const Vec rc = random_vec(probe->out.cls_logits.size(), rng, 1.0);
    const Vec rb = random_vec(probe->out.box.size(), rng, 1.0);
    const Vec rv = random_vec(probe->out.vel.size(), rng, 1.0);
    model_check("detector_outputs", det_in, [&](const DenseOutput<double>& o, OutputGrads<double>* g) {
      if (g) {
        g->cls_logits.v.assign(rc.begin(), rc.end());
        g->box.v.assign(rb.begin(), rb.end());
        g->vel.v.assign(rv.begin(), rv.end());
      }
      return dot(rc, o.cls_logits.v) + dot(rb, o.box.v) + dot(rv, o.vel.v);
    });
  }
  model_check("focal_loss", det_in, [&](const DenseOutput<double>& o, OutputGrads<double>* g) {
    return lc.c_cls * focal_loss(o.cls_logits, targets.assigned, lc, g ? &g->cls_logits : nullptr, lc.c_cls);
  });
  model_check("box_smooth_l1", det_in, [&](const DenseOutput<double>& o, OutputGrads<double>* g) {
    return lc.c_box *
           smooth_l1_loss(o.box, targets.box, targets.positive, 1.0, g ? &g->box : nullptr, lc.c_box).value;
  });
  model_check("vr_smooth_l1", det_in, [&](const DenseOutput<double>& o, OutputGrads<double>* g) {
    return lc.c_vr *
           smooth_l1_loss(o.vel, targets.vel, targets.has_vel, 1.0, g ? &g->vel : nullptr, lc.c_vr).value;
  });
  model_check("detection_loss_vr", det_in, [&](const DenseOutput<double>& o, OutputGrads<double>* g) {
    return detection_loss(o, targets, lc, true, g).total;
  });

  // Velocity step: detections of the labelled frame are fixed targets; all
  // cells of the unlabelled frame are decoded so the matching is stable
  // under small perturbations.
  SelfSupConfig sc;
  sc.eps_conf = 1.0;
  const std::vector<OBB> det_boxes = boxes_of(decode_detections(det.forward(det_in, base)->out, 0.0, 0.0));
  std::vector<Vec3> base_centers(og.width() * og.height());
  for (const auto& d : decode_detections(det.forward(vel_in, base)->out, 0.0, 0.0))
    base_centers[d.cell] = d.box.center;
  for (bool centers : {false, true}) {
    model_check(centers ? "velocity_step_full" : "velocity_step", vel_in,
                [&](const DenseOutput<double>& o, OutputGrads<double>* g) {
                  auto dets = decode_detections(o, 0.0, 0.0);
                  // Without the center path the box positions stay at their
                  // base values and only the velocities vary.
                  if (!centers)
                    for (auto& d : dets) d.box.center = base_centers[d.cell];
                  const VelocityLoss vl = velocity_loss(boxes_of(dets), det_boxes, sc);
                  if (g) *g = velocity_output_grads(o, dets, vl, centers);
                  return vl.value;
                });
  }
  return out;
}

}  // namespace radarvel
