#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "radarvel/simulator.hpp"

using namespace radarvel;
using namespace radarvel::testing;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("radarvel_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("simulator") {
  TEST_CASE("doppler projections") {
    const Pose2D origin{};
    CHECK(doppler(Vec3(5, 0, 0), Vec2(10, 0), origin, Vec2::Zero()).vr_comp == doctest::Approx(10.0));
    CHECK(std::abs(doppler(Vec3(0, 5, 0), Vec2(10, 0), origin, Vec2::Zero()).vr_comp) < 1e-15);
    CHECK(doppler(Vec3(5, 5, 0), Vec2(10, 0), origin, Vec2::Zero()).vr_comp ==
          doctest::Approx(10.0 / std::sqrt(2.0)));
    const DopplerResult d = doppler(Vec3(5, 0, 0), Vec2(10, 0), origin, Vec2(4, 3));
    CHECK(d.vr_raw == doctest::Approx(6.0));
    CHECK(d.vr_comp == doctest::Approx(10.0));
    // approaching is negative
    CHECK(doppler(Vec3(5, 0, 0), Vec2(-3, 0), origin, Vec2::Zero()).vr_comp == doctest::Approx(-3.0));
  }

  TEST_CASE("doppler rejects points at the sensor") {
    CHECK_THROWS_AS(doppler(Vec3(0.05, 0, 0), Vec2(1, 0), Pose2D{}, Vec2::Zero()), DegenerateGeometry);
    CHECK_NOTHROW(doppler(Vec3(0.2, 0, 0), Vec2(1, 0), Pose2D{}, Vec2::Zero()));
  }

  TEST_CASE("doppler is invariant under a rotation of the whole scene") {
    Rng rng(4);
    std::uniform_real_distribution<double> u(-30.0, 30.0), a(-kPi, kPi);
    for (int i = 0; i < 500; ++i) {
      const Vec3 p(u(rng), u(rng), 0.5);
      const Vec2 v(u(rng) * 0.3, u(rng) * 0.3), ego_v(u(rng) * 0.3, u(rng) * 0.3);
      const Pose2D sensor{u(rng) * 0.1, u(rng) * 0.1, a(rng)};
      if ((p.head<2>() - sensor.translation()).norm() < 1.0) continue;
      const Pose2D rot{0, 0, a(rng)};
      const Vec2 rp = rot.apply(Vec2(p.head<2>()));
      const DopplerResult d0 = doppler(p, v, sensor, ego_v);
      const DopplerResult d1 = doppler(Vec3(rp.x(), rp.y(), p.z()), rot.rotate(v), rot.compose(sensor), rot.rotate(ego_v));
      CHECK(std::abs(d0.vr_comp - d1.vr_comp) < 1e-9);
      CHECK(std::abs(d0.vr_raw - d1.vr_raw) < 1e-9);
    }
  }

  TEST_CASE("full dropout yields no reflections") {
    SensorConfig s = default_sensors()[0];
    s.dropout_prob = 1.0;
    ObjectTrack o = make_track(0, Pose2D{12, 0, 0.4}, 5.0);
    o.reflectivity = 30.0;
    Rng rng(1);
    CHECK(sample_reflections(o, 0.5, s, Pose2D{}, Vec2::Zero(), rng).empty());
  }

  TEST_CASE("static scene without noise has zero radial velocity") {
    const auto sensors = noiseless_sensors();
    const ObjectTrack o = make_track(0, Pose2D{10, 3, 0.7}, 0.0);
    Rng rng(2);
    std::size_t n = 0;
    for (const auto& s : sensors) {
      const auto pts = sample_reflections(o, 1.0, s, Pose2D{}, Vec2::Zero(), rng);
      for (const auto& p : pts) CHECK(p.vr == 0.0);
      n += pts.size();
    }
    CHECK(n > 0);
  }

  TEST_CASE("noiseless reflections carry the analytic Doppler") {
    const auto sensors = noiseless_sensors();
    Rng rng(3);
    std::uniform_real_distribution<double> u(-20.0, 20.0), a(-kPi, kPi);
    std::size_t n = 0;
    for (int k = 0; k < 100; ++k) {
      const ObjectTrack o = make_track(0, Pose2D{u(rng), u(rng), a(rng)}, std::abs(u(rng)));
      const Pose2D ego{u(rng) * 0.2, u(rng) * 0.2, a(rng)};
      const Vec2 ego_v(u(rng) * 0.5, u(rng) * 0.5);
      const double t = 0.3;
      for (const auto& s : sensors) {
        const Pose2D sensor_pose = ego.compose(s.mount);
        for (const auto& p : sample_reflections(o, t, s, ego, ego_v, rng)) {
          const Vec3 world(ego.apply(Vec2(p.pos.head<2>())).x(), ego.apply(Vec2(p.pos.head<2>())).y(), p.pos.z());
          const Vec2 los = (world.head<2>() - sensor_pose.translation()).normalized();
          CHECK(std::abs(p.vr - o.trajectory.velocity(t).dot(los)) < 1e-12);
          CHECK(std::abs(p.vr - doppler(world, o.trajectory.velocity(t), sensor_pose, ego_v).vr_comp) < 1e-12);
          const Vec2 rel = sensor_pose.inverse().apply(Vec2(world.head<2>()));
          CHECK(rel.norm() <= s.max_range);
          CHECK(std::abs(std::atan2(rel.y(), rel.x())) <= 0.5 * s.fov + 1e-12);
          CHECK(std::abs(p.azimuth - std::atan2(rel.y(), rel.x())) < 1e-12);
          ++n;
        }
      }
    }
    CHECK(n > 500);
  }

  TEST_CASE("compensated radial velocity does not depend on ego velocity") {
    const double t_ref = 1.5;
    std::vector<ObjectTrack> objs{make_track(0, Pose2D{12, 4, 0.3}, 8.0), make_track(1, Pose2D{-9, -6, 2.0}, 4.0),
                                  make_track(2, Pose2D{3, 11, -1.2}, 11.0)};
    Scenario slow = manual_scenario(objs, 2.0, 0.0), fast = manual_scenario(objs, 17.0, 0.0);
    // Same ego pose at t_ref, different ego speed.
    slow.ego.anchor_time = fast.ego.anchor_time = t_ref;
    Rng r1(9), r2(9);
    const Frame a = generate_frame(slow, t_ref, 1, r1), b = generate_frame(fast, t_ref, 1, r2);
    REQUIRE(a.scans[0].points.size() == b.scans[0].points.size());
    REQUIRE(a.scans[0].points.size() > 10);
    for (std::size_t i = 0; i < a.scans[0].points.size(); ++i) {
      CHECK((a.scans[0].points[i].pos - b.scans[0].points[i].pos).norm() < 1e-12);
      CHECK(std::abs(a.scans[0].points[i].vr - b.scans[0].points[i].vr) < 1e-9);
    }
  }

  TEST_CASE("single-scan frame has zero time offsets") {
    const Scenario sc = manual_scenario({make_track(0, Pose2D{10, 0, 0}, 5.0)}, 5.0, 0.0);
    Rng rng(1);
    const Frame f = generate_frame(sc, 1.0, 1, rng);
    REQUIRE(f.scans.size() == 1);
    CHECK(f.ref_time == 1.0);
    CHECK(f.scans[0].stamp == 1.0);
    for (const auto& p : f.scans[0].points) CHECK(p.dt == 0.0);
  }

  TEST_CASE("multi-scan frame stamps ascend and dt matches the stamp") {
    const Scenario sc = manual_scenario({make_track(0, Pose2D{10, 0, 0}, 5.0)}, 5.0, 0.0);
    Rng rng(1);
    const Frame f = generate_frame(sc, 1.5, 7, rng);
    REQUIRE(f.scans.size() == 7);
    CHECK(f.scans.back().stamp == f.ref_time);
    for (std::size_t k = 0; k + 1 < f.scans.size(); ++k) CHECK(f.scans[k].stamp < f.scans[k + 1].stamp);
    for (const auto& s : f.scans)
      for (const auto& p : s.points) CHECK(p.dt == s.stamp - f.ref_time);
  }

  TEST_CASE("static reflectors coincide across scans and across the frame pair") {
    std::vector<Vec3> clutter;
    for (int i = 0; i < 30; ++i) clutter.emplace_back(-15.0 + i, 8.0 - 0.5 * i, 0.3);
    const Scenario sc =
        manual_scenario({make_track(0, Pose2D{9, -4, 0.5}, 0.0)}, 6.0, 0.15, clutter);
    Rng rng(5);
    const double t_ref = 1.8;
    const FramePair pair = generate_frame_pair(sc, t_ref, 0.6, 7, rng);
    const Pose2D to_ref = sc.ego.pose(t_ref).inverse();
    std::vector<Vec2> expected;
    for (const auto& q : clutter) expected.push_back(to_ref.apply(Vec2(q.head<2>())));
    const OBB box = object_box(sc.objects[0], t_ref, sc.ego.pose(t_ref));

    std::size_t clutter_hits = 0, object_hits = 0;
    for (const Frame* f : {&pair.det, &pair.vel})
      for (const auto& s : f->scans)
        for (const auto& p : s.points) {
          double best = 1e9;
          for (const auto& e : expected) best = std::min(best, (Vec2(p.pos.head<2>()) - e).norm());
          if (best < 1e-9) {
            ++clutter_hits;
          } else {
            CHECK(perimeter_distance(p.pos.head<2>(), box) < 1e-9);
            ++object_hits;
          }
        }
    CHECK(clutter_hits > 100);
    CHECK(object_hits > 50);
  }

  TEST_CASE("a moving object's older scan trails by speed times scan period") {
    const ObjectTrack o = make_track(0, Pose2D{8, 5, 0.4}, 10.0);
    const Scenario sc = manual_scenario({o}, 4.0, 0.1);
    Rng rng(6);
    const double t_ref = 1.0;
    const Frame f = generate_frame(sc, t_ref, 2, rng);
    const OBB now = f.labels[0];
    const Vec2 shift = now.vel * sc.config.scan_period;
    CHECK(shift.norm() == doctest::Approx(10.0 * sc.config.scan_period));
    REQUIRE(f.scans[0].points.size() > 5);
    double worst_unshifted = 0.0;
    for (const auto& p : f.scans[0].points) {
      const Vec2 q = p.pos.head<2>();
      CHECK(perimeter_distance(q + shift, now) < 1e-9);
      worst_unshifted = std::max(worst_unshifted, perimeter_distance(q, now));
    }
    CHECK(worst_unshifted > 0.1);
    for (const auto& p : f.scans[1].points) CHECK(perimeter_distance(p.pos.head<2>(), now) < 1e-9);
  }

  TEST_CASE("frame pair geometry for a mover at (20, 0)") {
    const double t_ref = 1.5;
    const ObjectTrack o = make_track(0, Pose2D{20, 0, 0}, 5.0, t_ref);
    const Scenario sc = manual_scenario({o}, 0.0, 0.0);
    Rng rng(7);
    const FramePair pair = generate_frame_pair(sc, t_ref, 0.6, 1, rng);
    REQUIRE(pair.det.labels.size() == 1);
    CHECK(pair.det.labels[0].center.x() == doctest::Approx(20.0));
    CHECK(pair.det.labels[0].center.y() == doctest::Approx(0.0));
    CHECK(pair.vel.labels.empty());
    OBB past = pair.det.labels[0];
    past.center.x() = 17.0;
    REQUIRE(!pair.vel.scans[0].points.empty());
    for (const auto& p : pair.vel.scans[0].points) CHECK(perimeter_distance(p.pos.head<2>(), past) < 1e-9);
    CHECK(pair.vel.ref_time == doctest::Approx(t_ref - 0.6));
    CHECK(pair.vel.ego_pose == pair.det.ego_pose);
  }

  TEST_CASE("frame pair rejects a non-positive gap and out-of-window frames") {
    const Scenario sc = manual_scenario({make_track(0, Pose2D{10, 0, 0}, 5.0)}, 5.0, 0.0);
    Rng rng(1);
    CHECK_THROWS_AS(generate_frame_pair(sc, 1.5, 0.0, 7, rng), ValidationError);
    CHECK_THROWS_AS(generate_frame(sc, 0.2, 7, rng), OutOfScenario);
    CHECK_THROWS_AS(generate_frame(sc, 5.0, 1, rng), OutOfScenario);
  }

  TEST_CASE("generated scenes keep objects in the window and attach labels") {
    ScenarioConfig cfg;
    for (std::uint64_t i = 0; i < 20; ++i) {
      const FramePairRecord rec = make_record(cfg, i);
      const auto& labels = rec.pair.det.labels;
      CHECK(static_cast<int>(labels.size()) ==
            cfg.population.radial + cfg.population.tangential + cfg.population.stationary);
      for (const auto& l : labels) {
        CHECK(std::abs(l.center.x()) <= cfg.population.spawn_extent + 1e-6);
        CHECK(std::abs(l.center.y()) <= cfg.population.spawn_extent + 1e-6);
        CHECK(l.vel.norm() <= cfg.population.speed_max + 1e-6);
      }
      CHECK(rec.pair.det.scans.size() == static_cast<std::size_t>(cfg.n_scans));
      CHECK(rec.pair.vel.scans.size() == static_cast<std::size_t>(cfg.n_scans));
    }
  }

  TEST_CASE("dataset split counts and byte-identical regeneration") {
    ScenarioConfig cfg;
    cfg.seed = 17;
    const auto a = scratch("ds_a"), b = scratch("ds_b");
    make_dataset(cfg, {100, 0.8}, a);
    make_dataset(cfg, {100, 0.8}, b);
    for (const char* f : {"train.jsonl", "val.jsonl", "scenario.json"}) CHECK(slurp(a / f) == slurp(b / f));
    const Dataset d = load_dataset(a);
    CHECK(d.train.size() == 80);
    CHECK(d.val.size() == 20);

    cfg.seed = 18;
    const auto c = scratch("ds_c");
    make_dataset(cfg, {10, 0.8}, c);
    CHECK(slurp(a / "train.jsonl").substr(0, 2000) != slurp(c / "train.jsonl").substr(0, 2000));
    for (const auto& p : {a, b, c}) std::filesystem::remove_all(p);
  }

  TEST_CASE("written datasets read back to the in-memory records") {
    ScenarioConfig cfg;
    cfg.seed = 23;
    const auto dir = scratch("ds_rt");
    make_dataset(cfg, {12, 0.75}, dir);
    const Dataset read = load_dataset(dir);
    const Dataset built = build_dataset(cfg, {12, 0.75});
    CHECK(read.train == built.train);
    CHECK(read.val == built.val);
    for (std::size_t i = 0; i < read.train.size(); ++i) {
      CHECK(read.train[i] == make_record(cfg, i));
      CHECK(parse_record(serialize_record(read.train[i])) == read.train[i]);
    }
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("missing dataset files raise IoError") {
    CHECK_THROWS_AS(load_dataset(scratch("does_not_exist")), IoError);
    CHECK_THROWS_AS(parse_record("{not json"), IoError);
  }

  TEST_CASE("scenario config round-trips through JSON and validates") {
    ScenarioConfig cfg;
    cfg.seed = 99;
    cfg.population.tangential = 5;
    cfg.ego_yaw_rate = 0.1;
    const ScenarioConfig back = nlohmann::json(cfg).get<ScenarioConfig>();
    CHECK(nlohmann::json(back) == nlohmann::json(cfg));
    cfg.scan_period = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = ScenarioConfig{};
    cfg.duration = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
}
