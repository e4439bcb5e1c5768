#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "radarvel/heads.hpp"
#include "radarvel/model.hpp"

using namespace radarvel;

namespace {

Frame random_frame(std::uint64_t seed, int n_scans, double extent) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-extent, extent), v(-10.0, 10.0);
  Frame f;
  for (int s = 0; s < n_scans; ++s) {
    Scan scan;
    scan.stamp = -(n_scans - 1 - s) / 13.0;
    for (int i = 0; i < 60; ++i) {
      RadarPoint p;
      p.pos = Vec3(u(rng), u(rng), 0.5);
      p.vr = v(rng);
      p.rcs = v(rng);
      p.dt = scan.stamp;
      scan.points.push_back(p);
    }
    f.scans.push_back(scan);
  }
  return f;
}

DenseOutput<double> dense(int h, int w, double cell) {
  DenseOutput<double> o;
  o.geometry.x_min = o.geometry.y_min = 0.0;
  o.geometry.x_max = w * cell;
  o.geometry.y_max = h * cell;
  o.geometry.cell = cell;
  o.cls_logits = Tensor<double>(2, h, w);
  o.cls_prob = Tensor<double>(2, h, w);
  o.box = Tensor<double>(8, h, w);
  o.vel = Tensor<double>(2, h, w);
  return o;
}

void set_cell(DenseOutput<double>& o, int idx, double score, const OBB& box) {
  const std::size_t n = o.cls_prob.plane();
  o.cls_prob.v[idx] = 1.0 - score;
  o.cls_prob.v[n + idx] = score;
  const int r = idx / o.cls_prob.w, c = idx % o.cls_prob.w;
  const BoxCode code = encode_box(box, o.geometry.cell_center(r, c), o.geometry.cell);
  for (int k = 0; k < 8; ++k) o.box.v[k * n + idx] = code[k];
  o.vel.v[idx] = box.vel.x();
  o.vel.v[n + idx] = box.vel.y();
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("compact detector output shapes and probabilities") {
    const ModelConfig cfg = compact_model();
    const Detector<float> det(cfg);
    const auto params = det.init(1);
    CHECK(params.size() == det.param_count());
    const auto pass = det.forward(prepare_input(random_frame(1, 7, 16.0), cfg), params);
    const GridConfig og = cfg.output_grid();
    CHECK(pass->out.geometry == og);
    CHECK(pass->out.cls_logits.c == 2);
    CHECK(pass->out.box.c == kBoxCodeSize);
    CHECK(pass->out.vel.c == 2);
    for (const auto* t : {&pass->out.cls_logits, &pass->out.box, &pass->out.vel}) {
      CHECK(t->h == og.height());
      CHECK(t->w == og.width());
    }
    const std::size_t n = pass->out.cls_prob.plane();
    double mean_fg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float a = pass->out.cls_prob.v[i], b = pass->out.cls_prob.v[n + i];
      CHECK(std::abs(a + b - 1.0f) < 1e-6f);
      mean_fg += b;
    }
    // initial foreground prior
    CHECK(mean_fg / n == doctest::Approx(0.01).epsilon(0.5));
  }

  TEST_CASE("parameter views tile the parameter vector") {
    for (const ModelConfig& cfg : {compact_model(), ModelConfig{}}) {
      const Detector<float> det(cfg);
      std::size_t next = 0;
      for (const auto& v : det.views()) {
        CHECK(v.offset == next);
        CHECK(v.size > 0);
        next += v.size;
      }
      CHECK(next == det.param_count());
    }
    const Detector<float> compact(compact_model());
    CHECK(compact.param_count() > 15000);
    CHECK(compact.param_count() < 30000);
  }

  TEST_CASE("forward passes are deterministic and independent of earlier calls") {
    const ModelConfig cfg = compact_model();
    const Detector<float> det(cfg);
    const auto params = det.init(3);
    const auto in_a = prepare_input(random_frame(2, 7, 16.0), cfg);
    const auto in_b = prepare_input(random_frame(3, 7, 16.0), cfg);
    const auto first = det.forward(in_a, params);
    det.forward(in_b, params);
    const auto again = det.forward(in_a, params);
    CHECK(first->out.cls_logits.v == again->out.cls_logits.v);
    CHECK(first->out.box.v == again->out.box.v);
    CHECK(first->out.vel.v == again->out.vel.v);
    CHECK(det.init(3).values == params.values);
    CHECK(det.init(4).values != params.values);
  }

  TEST_CASE("extension toggles change the input layout") {
    ModelConfig cfg = compact_model();
    CHECK(cfg.input_channels() == 7 * cfg.pillar_channels + 1);
    cfg.use_temporal_pillars = false;
    CHECK(cfg.input_channels() == cfg.pillar_channels + 1);
    cfg.use_vr_map = false;
    CHECK(cfg.input_channels() == cfg.pillar_channels);
    cfg.use_shortcut = false;
    const Detector<float> det(cfg);
    const auto pass = det.forward(prepare_input(random_frame(4, 7, 16.0), cfg), det.init(1));
    CHECK(pass->out.vel.h == cfg.output_grid().height());
    cfg.n_scans = 3;
    cfg.use_temporal_pillars = true;
    CHECK(prepare_input(random_frame(4, 3, 16.0), cfg).blocks.size() == 3);
    CHECK_THROWS_AS(prepare_input(random_frame(4, 7, 16.0), cfg), ValidationError);
  }

  TEST_CASE("model config JSON round trip and presets") {
    ModelConfig cfg = compact_model();
    cfg.n_scans = 5;
    cfg.use_shortcut = false;
    CHECK(nlohmann::json(cfg).get<ModelConfig>() == cfg);
    CHECK(nlohmann::json{{"preset", "compact"}}.get<ModelConfig>() == compact_model());
    CHECK(nlohmann::json{{"preset", "default"}}.get<ModelConfig>() == ModelConfig{});
    const ModelConfig o = nlohmann::json{{"preset", "compact"}, {"n_scans", 3}}.get<ModelConfig>();
    CHECK(o.n_scans == 3);
    CHECK(o.stem_channels == compact_model().stem_channels);
    CHECK_THROWS_AS((nlohmann::json{{"preset", "huge"}}.get<ModelConfig>()), ValidationError);
    ModelConfig bad = compact_model();
    bad.grid.x_max = 15.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("box code round trip") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1.0, 1.0), d(0.5, 6.0), a(-kPi, kPi);
    for (int i = 0; i < 500; ++i) {
      const Vec2 cc(u(rng) * 10, u(rng) * 10);
      const OBB b = make_obb(Vec3(cc.x() + u(rng), cc.y() + u(rng), u(rng)), d(rng), d(rng), d(rng), a(rng));
      const OBB r = decode_box(encode_box(b, cc, 1.0), cc, 1.0);
      CHECK((r.center - b.center).norm() < 1e-12);
      CHECK(r.length == doctest::Approx(b.length));
      CHECK(r.width == doctest::Approx(b.width));
      CHECK(r.height == doctest::Approx(b.height));
      CHECK(std::abs(normalize_angle(r.yaw - b.yaw)) < 1e-12);
    }
  }

  TEST_CASE("target assignment marks cells whose center lies in a box") {
    GridConfig g;
    g.x_min = g.y_min = -8.0;
    g.x_max = g.y_max = 8.0;
    g.cell = 1.0;
    const OBB a = make_obb(Vec3(0, 0, 0), 4.0, 2.0, 1.5, 0.0, Vec2(3, 0));
    const OBB b = make_obb(Vec3(2.6, 0, 0), 4.0, 2.0, 1.5, 0.0);
    const Targets t = assign_targets({a, b}, g, {Vec2(3, 0), std::nullopt});
    int count = 0;
    for (int r = 0; r < g.height(); ++r)
      for (int c = 0; c < g.width(); ++c) {
        const int idx = r * g.width() + c;
        const Vec2 cc = g.cell_center(r, c);
        const bool in_a = point_in_obb(Vec3(cc.x(), cc.y(), 0), a), in_b = point_in_obb(Vec3(cc.x(), cc.y(), 0), b);
        CHECK(static_cast<bool>(t.positive[idx]) == (in_a || in_b));
        if (in_a && in_b) {
          const double da = std::hypot(cc.x(), cc.y()), db = std::hypot(cc.x() - 2.6, cc.y());
          CHECK(t.assigned[idx] == (da <= db ? 0 : 1));
        }
        if (t.positive[idx]) {
          ++count;
          CHECK(static_cast<bool>(t.has_vel[idx]) == (t.assigned[idx] == 0));
        }
      }
    CHECK(count == t.positives);
    CHECK(count > 0);
  }

  TEST_CASE("focal loss matches the per-cell formula") {
    const double p = 0.3;
    CHECK(focal_term(p, true, 0.25, 2.0) == doctest::Approx(-0.25 * 0.49 * std::log(0.3)));
    CHECK(focal_term(p, false, 0.25, 2.0) == doctest::Approx(-0.75 * 0.49 * std::log(0.3)));
    CHECK(focal_term(1.0, true, 0.25, 2.0) == 0.0);

    Tensor<double> logits(2, 3, 4);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 2.0);
    for (auto& v : logits.v) v = n(rng);
    std::vector<int> assigned(12, -1);
    assigned[3] = 0;
    assigned[7] = 1;
    double expect = 0.0;
    for (int i = 0; i < 12; ++i) {
      const double pf = 1.0 / (1.0 + std::exp(logits.v[i] - logits.v[12 + i]));
      expect += assigned[i] >= 0 ? focal_term(pf, true, 0.25, 2.0) : focal_term(1.0 - pf, false, 0.25, 2.0);
    }
    CHECK(focal_loss(logits, assigned, LossConfig{}, static_cast<Tensor<double>*>(nullptr), 1.0) == doctest::Approx(expect / 12.0));
  }

  TEST_CASE("smooth L1 and the weighted detection loss") {
    CHECK(smooth_l1(0.5) == doctest::Approx(0.125));
    CHECK(smooth_l1(-2.0) == doctest::Approx(1.5));
    CHECK(smooth_l1_grad(0.5) == doctest::Approx(0.5));
    CHECK(smooth_l1_grad(-2.0) == -1.0);
    const LossConfig cfg;
    CHECK(combine_detection_loss(2.0, 3.0, std::nullopt, cfg) == doctest::Approx(0.5 * 2 + 10 * 3));
    CHECK(combine_detection_loss(2.0, 3.0, 4.0, cfg) == doctest::Approx(0.5 * 2 + 10 * 3 + 0.1 * 4));

    Tensor<double> pred(2, 1, 3), target(2, 1, 3);
    pred.v = {0.5, 9.0, 3.0, 0.0, 9.0, 0.0};
    const LossTerm none = smooth_l1_loss(pred, target, std::vector<char>(3, 0), 1.0, static_cast<Tensor<double>*>(nullptr), 1.0);
    CHECK(none.no_positives);
    CHECK(none.value == 0.0);
    const LossTerm some = smooth_l1_loss(pred, target, std::vector<char>{1, 0, 1}, 1.0, static_cast<Tensor<double>*>(nullptr), 1.0);
    CHECK(some.value == doctest::Approx((0.125 + 2.5 + 0.0 + 0.0) / 4.0));
  }

  TEST_CASE("decoding applies a strict score threshold and distance NMS") {
    DenseOutput<double> o = dense(8, 8, 1.0);
    set_cell(o, 9, 0.9, make_obb(Vec3(1.5, 1.5, 0), 4, 2, 1.5, 0.2, Vec2(1, 2)));
    set_cell(o, 10, 0.8, make_obb(Vec3(2.5, 1.5, 0), 4, 2, 1.5, 0.2));   // 1 m away: suppressed
    set_cell(o, 45, 0.5, make_obb(Vec3(5.5, 5.5, 0), 4, 2, 1.5, 0.0));
    set_cell(o, 50, 0.3, make_obb(Vec3(2.5, 6.5, 0), 4, 2, 1.5, 0.0));
    const auto dets = decode_detections(o, 0.3, 2.0);
    REQUIRE(dets.size() == 2);
    CHECK(dets[0].cell == 9);
    CHECK(dets[0].box.score_fg == 0.9);
    CHECK(dets[0].box.score_bg == doctest::Approx(0.1));
    CHECK(dets[0].box.vel == Vec2(1, 2));
    CHECK((dets[0].box.center - Vec3(1.5, 1.5, 0)).norm() < 1e-12);
    CHECK(dets[1].cell == 45);
    CHECK(decode_detections(o, 0.3, 0.0).size() == 3);
  }
}
