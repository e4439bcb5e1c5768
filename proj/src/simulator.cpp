#include "radarvel/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace radarvel {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double gaussian(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  std::normal_distribution<double> n(0.0, sigma);
  return n(rng);
}

double uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return u(rng);
}

bool bernoulli(Rng& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  std::bernoulli_distribution b(p);
  return b(rng);
}

Vec2 xy(const Vec3& p) { return {p.x(), p.y()}; }

// Builds a point as seen by `sensor` from a world-frame reflector location.
// Returns false when it falls outside the field of view or range.
bool observe(const Vec3& world, const Vec2& point_vel,
             const SensorConfig& sensor, const Pose2D& sensor_pose,
             const Pose2D& ego_pose, const Vec2& ego_vel, Rng& rng,
             RadarPoint& out) {
  const Vec2 rel = sensor_pose.inverse().apply(xy(world));
  const double range = rel.norm();
  if (range <= 0.1 || range > sensor.max_range) return false;
  if (std::abs(std::atan2(rel.y(), rel.x())) > 0.5 * sensor.fov) return false;

  const DopplerResult d = doppler(world, point_vel, sensor_pose, ego_vel);
  const double vr = d.vr_comp + gaussian(rng, sensor.vr_noise_sigma);
  Vec3 noisy = world;
  noisy.x() += gaussian(rng, sensor.pos_noise_sigma);
  noisy.y() += gaussian(rng, sensor.pos_noise_sigma);
  const Vec2 rel_noisy = sensor_pose.inverse().apply(xy(noisy));

  out.pos = ego_pose.inverse().apply(noisy);
  out.vr = std::clamp(vr, -150.0, 150.0);
  out.rcs = uniform(rng, -10.0, 20.0);
  out.azimuth = std::atan2(rel_noisy.y(), rel_noisy.x());
  out.dt = 0.0;
  return true;
}

std::vector<RadarPoint> sample_clutter(const Scenario& sc,
                                       const SensorConfig& sensor,
                                       const Pose2D& ego_pose,
                                       const Vec2& ego_vel, Rng& rng) {
  std::vector<RadarPoint> out;
  const Pose2D sensor_pose = ego_pose.compose(sensor.mount);
  for (const Vec3& q : sc.clutter) {
    if (!bernoulli(rng, sc.config.population.clutter_detect_prob)) continue;
    RadarPoint p;
    if (observe(q, Vec2::Zero(), sensor, sensor_pose, ego_pose, ego_vel, rng, p))
      out.push_back(p);
  }
  return out;
}

void append_double(std::string& s, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  s += buf;
}

void append_array(std::string& s, std::initializer_list<double> values) {
  s += '[';
  bool first = true;
  for (double v : values) {
    if (!first) s += ',';
    first = false;
    append_double(s, v);
  }
  s += ']';
}

void append_frame(std::string& s, const Frame& f) {
  s += "{\"scans\":[";
  for (std::size_t k = 0; k < f.scans.size(); ++k) {
    if (k) s += ',';
    s += "{\"stamp\":";
    append_double(s, f.scans[k].stamp);
    s += ",\"points\":[";
    const auto& pts = f.scans[k].points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) s += ',';
      const auto& p = pts[i];
      append_array(s, {p.pos.x(), p.pos.y(), p.pos.z(), p.vr, p.rcs, p.azimuth, p.dt});
    }
    s += "]}";
  }
  s += "],\"labels\":[";
  for (std::size_t i = 0; i < f.labels.size(); ++i) {
    if (i) s += ',';
    const auto& b = f.labels[i];
    s += "{\"center\":";
    append_array(s, {b.center.x(), b.center.y(), b.center.z()});
    s += ",\"lwh\":";
    append_array(s, {b.length, b.width, b.height});
    s += ",\"yaw\":";
    append_double(s, b.yaw);
    s += ",\"vel\":";
    append_array(s, {b.vel.x(), b.vel.y()});
    s += '}';
  }
  s += "]}";
}

Frame parse_frame(const nlohmann::json& j, const Pose2D& ego_pose) {
  Frame f;
  f.ego_pose = ego_pose;
  for (const auto& js : j.at("scans")) {
    Scan scan;
    scan.stamp = js.at("stamp").get<double>();
    const auto& jp = js.at("points");
    scan.points.reserve(jp.size());
    for (const auto& a : jp) {
      if (a.size() != 7) throw IoError("radar point must have 7 fields");
      RadarPoint p;
      p.pos = {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
      p.vr = a[3].get<double>();
      p.rcs = a[4].get<double>();
      p.azimuth = a[5].get<double>();
      p.dt = a[6].get<double>();
      scan.points.push_back(p);
    }
    f.scans.push_back(std::move(scan));
  }
  if (!f.scans.empty()) f.ref_time = f.scans.back().stamp;
  for (const auto& jl : j.at("labels")) {
    const auto c = jl.at("center");
    const auto d = jl.at("lwh");
    const auto v = jl.at("vel");
    OBB b;
    b.center = {c[0].get<double>(), c[1].get<double>(), c[2].get<double>()};
    b.length = d[0].get<double>();
    b.width = d[1].get<double>();
    b.height = d[2].get<double>();
    b.yaw = jl.at("yaw").get<double>();
    b.vel = {v[0].get<double>(), v[1].get<double>()};
    f.labels.push_back(b);
  }
  return f;
}

Frame quantize(const Frame& f) {
  Frame q = f;
  for (auto& s : q.scans) {
    s.stamp = quantize9(s.stamp);
    for (auto& p : s.points) {
      p.pos = {quantize9(p.pos.x()), quantize9(p.pos.y()), quantize9(p.pos.z())};
      p.vr = quantize9(p.vr);
      p.rcs = quantize9(p.rcs);
      p.azimuth = quantize9(p.azimuth);
      p.dt = quantize9(p.dt);
    }
  }
  if (!q.scans.empty()) q.ref_time = q.scans.back().stamp;
  for (auto& b : q.labels) {
    b.center = {quantize9(b.center.x()), quantize9(b.center.y()), quantize9(b.center.z())};
    b.length = quantize9(b.length);
    b.width = quantize9(b.width);
    b.height = quantize9(b.height);
    b.yaw = quantize9(b.yaw);
    b.vel = {quantize9(b.vel.x()), quantize9(b.vel.y())};
    b.score_fg = 1.0;
    b.score_bg = 0.0;
  }
  return q;
}

}  // namespace

Rng make_stream(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t a = splitmix64(seed);
  const std::uint64_t b = splitmix64(a ^ splitmix64(index + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return Rng(seq);
}

Pose2D Trajectory::pose(double t) const {
  const double tau = t - anchor_time;
  const double yaw0 = anchor_pose.yaw;
  if (std::abs(yaw_rate) < 1e-12) {
    return {anchor_pose.x + speed * std::cos(yaw0) * tau,
            anchor_pose.y + speed * std::sin(yaw0) * tau, yaw0};
  }
  const double yaw = yaw0 + yaw_rate * tau;
  const double r = speed / yaw_rate;
  return {anchor_pose.x + r * (std::sin(yaw) - std::sin(yaw0)),
          anchor_pose.y - r * (std::cos(yaw) - std::cos(yaw0)),
          normalize_angle(yaw)};
}

Vec2 Trajectory::velocity(double t) const {
  const double yaw = anchor_pose.yaw + yaw_rate * (t - anchor_time);
  return {speed * std::cos(yaw), speed * std::sin(yaw)};
}

std::vector<SensorConfig> default_sensors() {
  const double deg = kPi / 180.0;
  std::vector<SensorConfig> s(5);
  s[0].mount = {2.3, 0.0, 0.0};
  s[1].mount = {2.0, 0.8, 50.0 * deg};
  s[2].mount = {2.0, -0.8, -50.0 * deg};
  s[3].mount = {-2.0, 0.8, 130.0 * deg};
  s[4].mount = {-2.0, -0.8, -130.0 * deg};
  return s;
}

void ScenarioConfig::validate() const {
  if (!(scan_period > 0.0)) throw ValidationError("scan_period must be positive");
  if (!(duration >= 2.0)) throw ValidationError("duration must be at least 2 s");
  if (n_scans < 1) throw ValidationError("n_scans must be >= 1");
  if (!(dt_gap > 0.0)) throw ValidationError("dt_gap must be positive");
  if (duration - dt_gap - (n_scans - 1) * scan_period < 0.0)
    throw ValidationError("duration too short for dt_gap and n_scans");
  if (population.speed_max > 40.0 || population.speed_min < 0.0 ||
      population.speed_min > population.speed_max)
    throw ValidationError("object speeds must satisfy 0 <= min <= max <= 40");
  for (const auto& s : sensors) {
    if (!(s.fov > 0.0 && s.fov <= 2.0 * kPi)) throw ValidationError("fov must lie in (0, 2pi]");
    if (s.pos_noise_sigma < 0.0 || s.vr_noise_sigma < 0.0)
      throw ValidationError("noise sigmas must be non-negative");
    if (s.dropout_prob < 0.0 || s.dropout_prob > 1.0)
      throw ValidationError("dropout_prob must lie in [0, 1]");
  }
}

Scenario make_scenario(const ScenarioConfig& cfg, double t_ref, Rng& rng) {
  cfg.validate();
  Scenario sc;
  sc.config = cfg;
  sc.ego.speed = cfg.ego_speed;
  sc.ego.yaw_rate = cfg.ego_yaw_rate;

  const auto& pop = cfg.population;
  const Pose2D ego_ref = sc.ego.pose(t_ref);
  const double t_vel = t_ref - cfg.dt_gap;
  const double t_lo = t_vel - (cfg.n_scans - 1) * cfg.scan_period;
  const double e = pop.spawn_extent;

  // Positions in the ego frame at t_ref, where every scan is compensated to.
  auto in_ref = [&](const Trajectory& tr, double t) {
    return ego_ref.inverse().apply(tr.pose(t).translation());
  };
  const std::array<double, 4> checks{t_lo, t_vel, 0.5 * (t_vel + t_ref), t_ref};

  struct Kind {
    int count;
    int type;  // 0 radial, 1 tangential, 2 stationary
  };
  const std::array<Kind, 3> kinds{{{pop.radial, 0}, {pop.tangential, 1}, {pop.stationary, 2}}};
  int next_id = 0;
  for (const Kind& kind : kinds) {
    for (int i = 0; i < kind.count; ++i) {
      for (int attempt = 0; attempt < 200; ++attempt) {
        const Vec2 p(uniform(rng, -e, e), uniform(rng, -e, e));
        if (p.norm() < pop.min_range) continue;
        const Vec2 los = p / p.norm();
        const double sign = bernoulli(rng, 0.5) ? 1.0 : -1.0;
        double heading = uniform(rng, -kPi, kPi);
        double speed = 0.0;
        double yaw_rate = 0.0;
        if (kind.type == 0) heading = std::atan2(sign * los.y(), sign * los.x());
        if (kind.type == 1) heading = std::atan2(sign * los.x(), -sign * los.y());
        if (kind.type != 2) {
          speed = uniform(rng, pop.speed_min, pop.speed_max);
          yaw_rate = pop.max_yaw_rate > 0.0 ? uniform(rng, -pop.max_yaw_rate, pop.max_yaw_rate) : 0.0;
        }
        ObjectTrack obj;
        obj.id = next_id;
        obj.length = uniform(rng, 4.0, 5.0);
        obj.width = uniform(rng, 1.7, 2.0);
        obj.height = uniform(rng, 1.4, 1.8);
        obj.reflectivity = pop.reflectivity;
        obj.trajectory.anchor_time = t_ref;
        obj.trajectory.anchor_pose = ego_ref.compose(Pose2D{p.x(), p.y(), heading});
        obj.trajectory.speed = speed;
        obj.trajectory.yaw_rate = yaw_rate;

        bool ok = true;
        for (double t : checks) {
          const Vec2 q = in_ref(obj.trajectory, t);
          const Vec2 ego_at_t = ego_ref.inverse().apply(sc.ego.pose(t).translation());
          if (std::abs(q.x()) > e || std::abs(q.y()) > e || (q - ego_at_t).norm() < pop.min_range) {
            ok = false;
            break;
          }
          for (const auto& other : sc.objects)
            if ((q - in_ref(other.trajectory, t)).norm() < pop.min_separation) ok = false;
          if (!ok) break;
        }
        if (ok) {
          sc.objects.push_back(obj);
          ++next_id;
          break;
        }
      }
    }
  }

  for (int i = 0; i < pop.clutter_count; ++i) {
    const Vec2 p(uniform(rng, -e - 2.0, e + 2.0), uniform(rng, -e - 2.0, e + 2.0));
    const Vec2 w = ego_ref.apply(p);
    sc.clutter.emplace_back(w.x(), w.y(), uniform(rng, 0.0, 1.0));
  }
  return sc;
}

DopplerResult doppler(const Vec3& point_pos, const Vec2& point_vel,
                      const Pose2D& sensor_world_pose,
                      const Vec2& sensor_world_vel) {
  const Vec2 d = xy(point_pos) - sensor_world_pose.translation();
  const double range = d.norm();
  if (range <= 0.1) throw DegenerateGeometry("point too close to sensor");
  const Vec2 u = d / range;
  return {(point_vel - sensor_world_vel).dot(u), point_vel.dot(u)};
}

Vec2 surface_velocity(const ObjectTrack& obj, double t, const Vec2& world_point,
                      bool rigid_body_rotation) {
  Vec2 v = obj.trajectory.velocity(t);
  if (rigid_body_rotation) {
    const Vec2 r = world_point - obj.trajectory.pose(t).translation();
    v += obj.trajectory.yaw_rate * Vec2(-r.y(), r.x());
  }
  return v;
}

std::vector<RadarPoint> sample_reflections(const ObjectTrack& obj, double t,
                                           const SensorConfig& sensor,
                                           const Pose2D& ego_pose,
                                           const Vec2& ego_vel, Rng& rng,
                                           bool rigid_body_rotation) {
  std::vector<RadarPoint> out;
  const Pose2D sensor_pose = ego_pose.compose(sensor.mount);
  const Pose2D box = obj.trajectory.pose(t);
  const double hl = 0.5 * obj.length, hw = 0.5 * obj.width;

  struct Face {
    Vec2 center, normal, along;
    double extent;
  };
  const std::array<Face, 4> faces{{{{hl, 0}, {1, 0}, {0, 1}, obj.width},
                                   {{-hl, 0}, {-1, 0}, {0, 1}, obj.width},
                                   {{0, hw}, {0, 1}, {1, 0}, obj.length},
                                   {{0, -hw}, {0, -1}, {1, 0}, obj.length}}};
  const Vec2 sensor_in_box = box.inverse().apply(sensor_pose.translation());
  std::vector<const Face*> visible;
  double total = 0.0;
  for (const auto& f : faces) {
    if (f.normal.dot(sensor_in_box - f.center) > 0.0) {
      visible.push_back(&f);
      total += f.extent;
    }
  }

  std::poisson_distribution<int> count_dist(obj.reflectivity);
  const int count = obj.reflectivity > 0.0 ? count_dist(rng) : 0;
  for (int i = 0; i < count; ++i) {
    const double s = uniform(rng, 0.0, total);
    const double z = uniform(rng, 0.0, obj.height);
    const bool dropped = bernoulli(rng, sensor.dropout_prob);
    if (visible.empty() || dropped) continue;
    double acc = 0.0;
    const Face* face = visible.back();
    double offset = s;
    for (const Face* f : visible) {
      if (s <= acc + f->extent) {
        face = f;
        offset = s - acc;
        break;
      }
      acc += f->extent;
    }
    offset = std::min(offset, face->extent);
    const Vec2 local = face->center + face->along * (offset - 0.5 * face->extent);
    const Vec2 w = box.apply(local);
    const Vec2 vel = surface_velocity(obj, t, w, rigid_body_rotation);
    RadarPoint p;
    if (observe(Vec3(w.x(), w.y(), z), vel, sensor, sensor_pose, ego_pose, ego_vel, rng, p))
      out.push_back(p);
  }
  return out;
}

OBB object_box(const ObjectTrack& obj, double t, const Pose2D& frame_pose) {
  const Pose2D world = obj.trajectory.pose(t);
  const Pose2D local = frame_pose.inverse().compose(world);
  const Vec2 vel = frame_pose.inverse().rotate(obj.trajectory.velocity(t));
  return make_obb(Vec3(local.x, local.y, 0.5 * obj.height), obj.length, obj.width,
                  obj.height, local.yaw, vel, 1.0);
}

Frame generate_frame(const Scenario& scenario, double t_ref, int n_scans, Rng& rng) {
  return generate_frame(scenario, t_ref, n_scans, rng, t_ref);
}

Frame generate_frame(const Scenario& scenario, double t_ref, int n_scans, Rng& rng,
                     double expressed_at) {
  const auto& cfg = scenario.config;
  if (n_scans < 1) throw ValidationError("n_scans must be >= 1");
  if (t_ref - (n_scans - 1) * cfg.scan_period < -1e-12 || t_ref > cfg.duration + 1e-9 ||
      expressed_at > cfg.duration + 1e-9)
    throw OutOfScenario("frame window outside the scenario duration");

  Frame f;
  f.ref_time = t_ref;
  f.ego_pose = scenario.ego.pose(expressed_at);
  const Pose2D to_frame = f.ego_pose.inverse();
  for (int k = n_scans - 1; k >= 0; --k) {
    Scan scan;
    scan.stamp = k == 0 ? t_ref : t_ref - k * cfg.scan_period;
    const Pose2D ego_k = scenario.ego.pose(scan.stamp);
    const Vec2 ego_vel = scenario.ego.velocity(scan.stamp);
    const Pose2D compensate = to_frame.compose(ego_k);
    for (const auto& sensor : cfg.sensors) {
      for (const auto& obj : scenario.objects) {
        auto pts = sample_reflections(obj, scan.stamp, sensor, ego_k, ego_vel, rng,
                                      cfg.rigid_body_rotation);
        scan.points.insert(scan.points.end(), pts.begin(), pts.end());
      }
      auto clutter = sample_clutter(scenario, sensor, ego_k, ego_vel, rng);
      scan.points.insert(scan.points.end(), clutter.begin(), clutter.end());
    }
    for (auto& p : scan.points) {
      p.pos = compensate.apply(p.pos);
      p.dt = scan.stamp - t_ref;
    }
    f.scans.push_back(std::move(scan));
  }
  for (const auto& obj : scenario.objects) f.labels.push_back(object_box(obj, t_ref, f.ego_pose));
  return f;
}

FramePair generate_frame_pair(const Scenario& scenario, double t_ref, double dt_gap,
                              int n_scans, Rng& rng) {
  if (!(dt_gap > 0.0)) throw ValidationError("dt_gap must be positive");
  FramePair pair;
  pair.det = generate_frame(scenario, t_ref, n_scans, rng, t_ref);
  pair.vel = generate_frame(scenario, t_ref - dt_gap, n_scans, rng, t_ref);
  pair.vel.labels.clear();
  return pair;
}

// ---------------------------------------------------------------------------

double quantize9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::strtod(buf, nullptr);
}

FramePairRecord quantize(const FramePairRecord& rec) {
  FramePairRecord q;
  q.t_ref = quantize9(rec.t_ref);
  q.ego_pose = {quantize9(rec.ego_pose.x), quantize9(rec.ego_pose.y), quantize9(rec.ego_pose.yaw)};
  q.pair.det = quantize(rec.pair.det);
  q.pair.vel = quantize(rec.pair.vel);
  q.pair.det.ego_pose = q.ego_pose;
  q.pair.vel.ego_pose = q.ego_pose;
  return q;
}

std::string serialize_record(const FramePairRecord& rec) {
  std::string s;
  s.reserve(1 << 16);
  s += "{\"t_ref\":";
  append_double(s, rec.t_ref);
  s += ",\"ego_pose\":";
  append_array(s, {rec.ego_pose.x, rec.ego_pose.y, rec.ego_pose.yaw});
  s += ",\"det\":";
  append_frame(s, rec.pair.det);
  s += ",\"vel\":";
  Frame vel = rec.pair.vel;
  vel.labels.clear();
  append_frame(s, vel);
  s += '}';
  return s;
}

FramePairRecord parse_record(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    FramePairRecord rec;
    rec.t_ref = j.at("t_ref").get<double>();
    const auto& e = j.at("ego_pose");
    rec.ego_pose = {e[0].get<double>(), e[1].get<double>(), e[2].get<double>()};
    rec.pair.det = parse_frame(j.at("det"), rec.ego_pose);
    rec.pair.vel = parse_frame(j.at("vel"), rec.ego_pose);
    return rec;
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(std::string("malformed dataset record: ") + ex.what());
  }
}

void write_records(const std::filesystem::path& path,
                   const std::vector<FramePairRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& r : records) out << serialize_record(r) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<FramePairRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<FramePairRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_record(line));
  }
  return out;
}

FramePairRecord make_record(const ScenarioConfig& cfg, std::uint64_t index) {
  Rng rng = make_stream(cfg.seed, index);
  const double t_ref = cfg.duration;
  const Scenario sc = make_scenario(cfg, t_ref, rng);
  FramePairRecord rec;
  rec.t_ref = t_ref;
  rec.pair = generate_frame_pair(sc, t_ref, cfg.dt_gap, cfg.n_scans, rng);
  rec.ego_pose = rec.pair.det.ego_pose;
  return quantize(rec);
}

namespace {

void check_split(const SplitSpec& split) {
  if (split.n_pairs < 1 || split.train_fraction < 0.0 || split.train_fraction > 1.0)
    throw ValidationError("invalid split spec");
}

}  // namespace

Dataset build_dataset(const ScenarioConfig& cfg, const SplitSpec& split) {
  cfg.validate();
  check_split(split);
  Dataset d;
  d.scenario = cfg;
  const int n_train = static_cast<int>(std::lround(split.n_pairs * split.train_fraction));
  for (int i = 0; i < split.n_pairs; ++i) {
    auto rec = parse_record(serialize_record(make_record(cfg, static_cast<std::uint64_t>(i))));
    (i < n_train ? d.train : d.val).push_back(std::move(rec));
  }
  return d;
}

void make_dataset(const ScenarioConfig& cfg, const SplitSpec& split,
                  const std::filesystem::path& out_dir) {
  cfg.validate();
  check_split(split);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const int n_train = static_cast<int>(std::lround(split.n_pairs * split.train_fraction));
  std::ofstream train(out_dir / "train.jsonl", std::ios::binary);
  std::ofstream val(out_dir / "val.jsonl", std::ios::binary);
  if (!train || !val) throw IoError("cannot open dataset files in " + out_dir.string());
  for (int i = 0; i < split.n_pairs; ++i) {
    const auto rec = make_record(cfg, static_cast<std::uint64_t>(i));
    (i < n_train ? train : val) << serialize_record(rec) << '\n';
  }
  std::ofstream sc(out_dir / "scenario.json", std::ios::binary);
  if (!sc) throw IoError("cannot write scenario.json");
  sc << nlohmann::json(cfg).dump(2) << '\n';
  if (!train || !val || !sc) throw IoError("failed writing dataset");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.scenario = load_scenario_config(dir / "scenario.json");
  d.train = read_records(dir / "train.jsonl");
  d.val = read_records(dir / "val.jsonl");
  return d;
}

namespace {

nlohmann::json pose_json(const Pose2D& p) { return {p.x, p.y, p.yaw}; }
Pose2D pose_from(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

void to_json(nlohmann::json& j, const ScenarioConfig& cfg) {
  const auto& p = cfg.population;
  nlohmann::json sensors = nlohmann::json::array();
  for (const auto& s : cfg.sensors)
    sensors.push_back({{"mount", pose_json(s.mount)},
                       {"fov", s.fov},
                       {"max_range", s.max_range},
                       {"pos_noise_sigma", s.pos_noise_sigma},
                       {"vr_noise_sigma", s.vr_noise_sigma},
                       {"dropout_prob", s.dropout_prob}});
  j = {{"duration", cfg.duration},
       {"scan_period", cfg.scan_period},
       {"ego", {{"speed", cfg.ego_speed}, {"yaw_rate", cfg.ego_yaw_rate}}},
       {"n_scans", cfg.n_scans},
       {"dt_gap", cfg.dt_gap},
       {"population",
        {{"radial", p.radial},
         {"tangential", p.tangential},
         {"stationary", p.stationary},
         {"speed_min", p.speed_min},
         {"speed_max", p.speed_max},
         {"max_yaw_rate", p.max_yaw_rate},
         {"reflectivity", p.reflectivity},
         {"spawn_extent", p.spawn_extent},
         {"min_range", p.min_range},
         {"min_separation", p.min_separation},
         {"clutter_count", p.clutter_count},
         {"clutter_detect_prob", p.clutter_detect_prob}}},
       {"sensors", sensors},
       {"rigid_body_rotation", cfg.rigid_body_rotation},
       {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, ScenarioConfig& cfg) {
  const ScenarioConfig d;
  cfg.duration = j.value("duration", d.duration);
  cfg.scan_period = j.value("scan_period", d.scan_period);
  if (j.contains("ego")) {
    cfg.ego_speed = j["ego"].value("speed", d.ego_speed);
    cfg.ego_yaw_rate = j["ego"].value("yaw_rate", d.ego_yaw_rate);
  }
  cfg.n_scans = j.value("n_scans", d.n_scans);
  cfg.dt_gap = j.value("dt_gap", d.dt_gap);
  if (j.contains("population")) {
    const auto& jp = j["population"];
    auto& p = cfg.population;
    p.radial = jp.value("radial", d.population.radial);
    p.tangential = jp.value("tangential", d.population.tangential);
    p.stationary = jp.value("stationary", d.population.stationary);
    p.speed_min = jp.value("speed_min", d.population.speed_min);
    p.speed_max = jp.value("speed_max", d.population.speed_max);
    p.max_yaw_rate = jp.value("max_yaw_rate", d.population.max_yaw_rate);
    p.reflectivity = jp.value("reflectivity", d.population.reflectivity);
    p.spawn_extent = jp.value("spawn_extent", d.population.spawn_extent);
    p.min_range = jp.value("min_range", d.population.min_range);
    p.min_separation = jp.value("min_separation", d.population.min_separation);
    p.clutter_count = jp.value("clutter_count", d.population.clutter_count);
    p.clutter_detect_prob = jp.value("clutter_detect_prob", d.population.clutter_detect_prob);
  }
  if (j.contains("sensors")) {
    cfg.sensors.clear();
    for (const auto& js : j["sensors"]) {
      SensorConfig s;
      if (js.contains("mount")) s.mount = pose_from(js["mount"]);
      s.fov = js.value("fov", s.fov);
      s.max_range = js.value("max_range", s.max_range);
      s.pos_noise_sigma = js.value("pos_noise_sigma", s.pos_noise_sigma);
      s.vr_noise_sigma = js.value("vr_noise_sigma", s.vr_noise_sigma);
      s.dropout_prob = js.value("dropout_prob", s.dropout_prob);
      cfg.sensors.push_back(s);
    }
  }
  cfg.rigid_body_rotation = j.value("rigid_body_rotation", d.rigid_body_rotation);
  cfg.seed = j.value("seed", d.seed);
}

ScenarioConfig load_scenario_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    ScenarioConfig cfg = nlohmann::json::parse(in).get<ScenarioConfig>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed scenario config: ") + ex.what());
  }
}

}  // namespace radarvel
