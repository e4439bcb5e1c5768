#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "radarvel/selfsup.hpp"

using namespace radarvel;
using namespace radarvel::testing;

namespace {

OBB box_at(double x, double y, Vec2 vel = Vec2::Zero(), double score = 1.0) {
  return make_obb(Vec3(x, y, 0.0), 4.5, 1.9, 1.6, 0.0, vel, score);
}

}  // namespace

TEST_SUITE("selfsup") {
  TEST_CASE("filter_confident keeps score_bg strictly below the cut") {
    const std::vector<OBB> boxes{box_at(0, 0, {}, 0.9), box_at(1, 0, {}, 0.5), box_at(2, 0, {}, 0.4),
                                 box_at(3, 0, {}, 0.51)};
    const auto kept = filter_confident(boxes, 0.5);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0] == boxes[0]);
    CHECK(kept[1] == boxes[3]);
    CHECK(confident_indices(boxes, 0.5) == std::vector<int>{0, 3});
    CHECK(filter_confident({}, 0.5).empty());
  }

  TEST_CASE("match_boxes hand examples") {
    const std::vector<OBB> a{box_at(0, 0), box_at(10, 0)};
    const std::vector<OBB> b{box_at(9, 0), box_at(0.5, 0), box_at(30, 0)};
    const MatchSet m = match_boxes(a, b);
    REQUIRE(m.pairs.size() == 2);
    CHECK(m.pairs[0] == Match{0, 1, 0.5});
    CHECK(m.pairs[1] == Match{1, 0, 1.0});
    CHECK(match_boxes(a, {}).pairs.empty());
    CHECK(match_boxes({}, b).pairs.empty());
    CHECK(match_boxes(a, b, 0.9).pairs.size() == 1);
    // greedy, not optimal: the closest pair is taken first
    const std::vector<OBB> c{box_at(0, 0), box_at(2, 0)}, d{box_at(1.1, 0), box_at(-0.5, 0)};
    const MatchSet g = match_boxes(c, d);
    CHECK(g.pairs[0] == Match{0, 1, 0.5});
    CHECK(g.pairs[1] == Match{1, 0, bev_distance(c[1], d[0])});
  }

  TEST_CASE("match_boxes equals the brute-force oracle") {
    std::mt19937_64 rng(2024);
    int ties = 0;
    for (int i = 0; i < 1000; ++i) {
      const MatchInstance inst = random_match_instance(rng);
      const MatchSet got = match_boxes(inst.a, inst.b), want = brute_force_match(inst.a, inst.b);
      CHECK(got.pairs == want.pairs);
      CHECK(got.pairs.size() == std::min(inst.a.size(), inst.b.size()));
      const MatchSet capped = match_boxes(inst.a, inst.b, 2.5);
      CHECK(capped.pairs == brute_force_match(inst.a, inst.b, 2.5).pairs);
      for (std::size_t k = 1; k < got.pairs.size(); ++k) ties += got.pairs[k].distance == got.pairs[k - 1].distance;
    }
    CHECK(ties > 50);
  }

  TEST_CASE("velocity loss of a 1.5 m residual") {
    const SelfSupConfig cfg;
    const VelocityLoss l = velocity_loss({box_at(0, 0)}, {box_at(1.5, 0)}, cfg);
    CHECK_FALSE(l.no_matches);
    CHECK(l.value == doctest::Approx(0.075).epsilon(1e-12));
    // moving the updated center toward the detection lowers the loss
    CHECK(l.vel_grad[0].x() == doctest::Approx(-0.05 * 0.6));
    CHECK(l.center_grad[0].x() == doctest::Approx(-0.05));
  }

  TEST_CASE("velocity loss is zero at the exact displacement") {
    const SelfSupConfig cfg;
    const VelocityLoss l = velocity_loss({box_at(17, 0, Vec2(5, 0))}, {box_at(20, 0)}, cfg);
    CHECK_FALSE(l.no_matches);
    CHECK(l.value == 0.0);
    CHECK(std::isfinite(l.vel_grad[0].x()));
    CHECK(std::isfinite(l.vel_grad[0].y()));
  }

  TEST_CASE("velocity loss averages over matches and skips unconfident boxes") {
    const SelfSupConfig cfg;
    const std::vector<OBB> vel{box_at(0, 0), box_at(10, 0, {}, 0.3), box_at(20, 0)};
    const std::vector<OBB> det{box_at(21, 0), box_at(0, 2), box_at(10, 0, {}, 0.2)};
    const VelocityLoss l = velocity_loss(vel, det, cfg);
    REQUIRE(l.matches.pairs.size() == 2);
    CHECK(l.matches.pairs[0] == Match{2, 0, 1.0});
    CHECK(l.matches.pairs[1] == Match{0, 1, 2.0});
    CHECK(l.value == doctest::Approx(0.05 * 1.5));
    CHECK(l.vel_grad[1] == Vec2::Zero());

    const VelocityLoss none = velocity_loss({box_at(0, 0, {}, 0.1)}, {box_at(0, 0)}, cfg);
    CHECK(none.no_matches);
    CHECK(none.value == 0.0);
  }

  TEST_CASE("self-sup config validation") {
    SelfSupConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.eps_conf = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = SelfSupConfig{};
    cfg.dt_gap = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }

  TEST_CASE("Doppler pseudo-label de-projects onto the heading") {
    Frame f;
    f.scans.resize(1);
    RadarPoint p;
    p.pos = Vec3(10, 0, 0.5);
    p.azimuth = 0.0;
    p.vr = 3.0;
    f.scans[0].points.push_back(p);
    p.pos = Vec3(10.5, 0.2, 0.5);
    p.vr = 1.0;
    f.scans[0].points.push_back(p);
    const std::vector<Pose2D> sensors{Pose2D{}};
    // heading 60 degrees off the line of sight: |v| = vr / cos 60
    const OBB gt = make_obb(Vec3(10, 0, 0.5), 4.5, 1.9, 1.6, kPi / 3);
    const auto pl = doppler_pseudo_label(gt, f, sensors, 4);
    REQUIRE(pl.has_value());
    CHECK(pl->box_id == 4);
    CHECK(pl->v.x() == doctest::Approx(3.0));
    CHECK(pl->v.y() == doctest::Approx(6.0 * std::sin(kPi / 3)));
    CHECK_FALSE(doppler_pseudo_label(make_obb(Vec3(-20, 0, 0), 4, 2, 1.5, 0), f, sensors).has_value());
  }
}
