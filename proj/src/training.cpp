#include "radarvel/training.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace radarvel {

namespace {

constexpr double kDeg = kPi / 180.0;

GradientScope parse_scope(const std::string& s) {
  if (s == "velocity_backbone") return GradientScope::kVelocityBackbone;
  if (s == "full") return GradientScope::kFull;
  if (s == "velocity_head") return GradientScope::kVelocityHead;
  throw ValidationError("unknown gradient_scope: " + s);
}

VelocitySupervision parse_supervision(const std::string& s) {
  if (s == "self_supervised") return VelocitySupervision::kSelfSupervised;
  if (s == "label") return VelocitySupervision::kLabel;
  throw ValidationError("unknown supervision: " + s);
}

}  // namespace

std::string to_string(GradientScope s) {
  switch (s) {
    case GradientScope::kVelocityBackbone: return "velocity_backbone";
    case GradientScope::kFull: return "full";
    case GradientScope::kVelocityHead: return "velocity_head";
  }
  return "velocity_backbone";
}

std::string to_string(VelocitySupervision s) {
  return s == VelocitySupervision::kLabel ? "label" : "self_supervised";
}

void TrainConfig::validate() const {
  model.validate();
  selfsup.validate();
  if (phase1_epochs < 0 || phase2_epochs < 0) throw ValidationError("epochs must be non-negative");
  if (!(lr_phase1 > 0.0) || !(lr_phase2 > 0.0)) throw ValidationError("learning rates must be positive");
  if (augment_deg < 0.0 || augment_deg > 180.0) throw ValidationError("augment_deg must lie in [0, 180]");
  if (!(nms_radius >= 0.0)) throw ValidationError("nms_radius must be non-negative");
  if (!(proposal_threshold >= 0.0 && proposal_threshold < 1.0 - selfsup.eps_conf + 1e-12))
    throw ValidationError("proposal_threshold must not exceed the confidence cut");
  if (loss.c_cls < 0 || loss.c_box < 0 || loss.c_vr < 0 || loss.c_vel < 0)
    throw ValidationError("loss weights must be non-negative");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"phase1_epochs", c.phase1_epochs},
       {"phase2_epochs", c.phase2_epochs},
       {"lr_phase1", c.lr_phase1},
       {"lr_phase2", c.lr_phase2},
       {"c_cls", c.loss.c_cls},
       {"c_box", c.loss.c_box},
       {"c_vr", c.loss.c_vr},
       {"c_vel", c.loss.c_vel},
       {"eps_conf", c.selfsup.eps_conf},
       {"dt_gap", c.selfsup.dt_gap},
       {"augment_deg", c.augment_deg},
       {"use_vr_pretrain", c.use_vr_pretrain},
       {"supervision", to_string(c.supervision)},
       {"gradient_scope", to_string(c.gradient_scope)},
       {"nms_radius", c.nms_radius},
       {"proposal_threshold", c.proposal_threshold},
       {"seed", c.seed}};
  if (std::isfinite(c.selfsup.max_match_distance)) j["max_match_distance"] = c.selfsup.max_match_distance;
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c = d;
  if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
  c.model.n_scans = j.value("n_scans", c.model.n_scans);
  c.model.use_vr_map = j.value("use_vr_map", c.model.use_vr_map);
  c.model.use_shortcut = j.value("use_shortcut", c.model.use_shortcut);
  c.model.use_temporal_pillars = j.value("use_temporal_pillars", c.model.use_temporal_pillars);
  c.phase1_epochs = j.value("phase1_epochs", d.phase1_epochs);
  c.phase2_epochs = j.value("phase2_epochs", d.phase2_epochs);
  c.lr_phase1 = j.value("lr_phase1", d.lr_phase1);
  c.lr_phase2 = j.value("lr_phase2", d.lr_phase2);
  c.loss.c_cls = j.value("c_cls", d.loss.c_cls);
  c.loss.c_box = j.value("c_box", d.loss.c_box);
  c.loss.c_vr = j.value("c_vr", d.loss.c_vr);
  c.loss.c_vel = j.value("c_vel", d.loss.c_vel);
  c.selfsup.c_vel = c.loss.c_vel;
  c.selfsup.eps_conf = j.value("eps_conf", d.selfsup.eps_conf);
  c.selfsup.dt_gap = j.value("dt_gap", d.selfsup.dt_gap);
  c.selfsup.max_match_distance = j.value("max_match_distance", d.selfsup.max_match_distance);
  c.augment_deg = j.value("augment_deg", d.augment_deg);
  c.use_vr_pretrain = j.value("use_vr_pretrain", d.use_vr_pretrain);
  c.supervision = parse_supervision(j.value("supervision", to_string(d.supervision)));
  c.gradient_scope = parse_scope(j.value("gradient_scope", to_string(d.gradient_scope)));
  c.nms_radius = j.value("nms_radius", d.nms_radius);
  c.proposal_threshold = j.value("proposal_threshold", d.proposal_threshold);
  c.seed = j.value("seed", d.seed);
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed training config: ") + ex.what());
  }
  TrainConfig c;
  try {
    c = j.get<TrainConfig>();
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("bad training config: ") + ex.what());
  }
  c.validate();
  return c;
}

Frame keep_newest_scans(const Frame& frame, int n) {
  if (n <= 0 || n > static_cast<int>(frame.scans.size()))
    throw ShapeMismatch("frame holds fewer scans than the model consumes");
  Frame out;
  out.ref_time = frame.ref_time;
  out.ego_pose = frame.ego_pose;
  out.labels = frame.labels;
  out.scans.assign(frame.scans.end() - n, frame.scans.end());
  return out;
}

std::vector<Pose2D> rotated_mounts(const std::vector<SensorConfig>& sensors, double angle) {
  const Pose2D rot{0.0, 0.0, angle};
  std::vector<Pose2D> out;
  out.reserve(sensors.size());
  for (const auto& s : sensors) out.push_back(rot.compose(s.mount));
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,L_cls,L_box,L_vr,L_vel,match_count_mean\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.l_cls, r.l_box, r.l_vr,
                  r.l_vel, r.match_count_mean);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Trainer::Trainer(TrainConfig cfg, std::vector<SensorConfig> sensors)
    : cfg_(std::move(cfg)), sensors_(std::move(sensors)), det_(cfg_.model) {
  cfg_.selfsup.c_vel = cfg_.loss.c_vel;
  cfg_.validate();
  params_ = det_.init(cfg_.seed);
}

Trainer::Trainer(TrainConfig cfg, std::vector<SensorConfig> sensors, const Checkpoint& from)
    : Trainer(std::move(cfg), std::move(sensors)) {
  if (!(from.model == cfg_.model)) throw ShapeMismatch("checkpoint model differs from the training config");
  if (from.params.size() != det_.param_count()) throw ShapeMismatch("checkpoint parameter count mismatch");
  params_ = from.params;
  adam_ = from.adam;
  epoch_ = from.epoch;
}

Checkpoint Trainer::checkpoint(const std::string& phase) const {
  Checkpoint c;
  c.model = cfg_.model;
  c.seed = cfg_.seed;
  c.epoch = epoch_;
  c.phase = phase;
  c.params = params_;
  c.adam = adam_;
  return c;
}

double Trainer::draw_angle(Rng& rng) const {
  if (cfg_.augment_deg == 0.0) return 0.0;
  std::uniform_real_distribution<double> u(-cfg_.augment_deg * kDeg, cfg_.augment_deg * kDeg);
  return u(rng);
}

std::vector<char> Trainer::scope_mask(bool velocity_step) const {
  std::vector<char> mask(det_.param_count(), 0);
  for (const auto& v : det_.views()) {
    bool on = true;
    if (velocity_step) {
      switch (cfg_.gradient_scope) {
        case GradientScope::kVelocityBackbone:
          on = v.group != ParamGroup::kClassOut && v.group != ParamGroup::kBoxOut;
          break;
        case GradientScope::kFull: on = v.group != ParamGroup::kClassOut; break;
        case GradientScope::kVelocityHead: on = v.group == ParamGroup::kVelocityOut; break;
      }
    }
    std::fill(mask.begin() + v.offset, mask.begin() + v.offset + v.size, static_cast<char>(on));
  }
  return mask;
}

std::vector<std::optional<Vec2>> Trainer::velocity_targets(const Frame& det, double angle) const {
  std::vector<std::optional<Vec2>> t(det.labels.size());
  if (cfg_.supervision == VelocitySupervision::kLabel) {
    for (std::size_t i = 0; i < det.labels.size(); ++i) t[i] = det.labels[i].vel;
    return t;
  }
  const auto mounts = rotated_mounts(sensors_, angle);
  for (std::size_t i = 0; i < det.labels.size(); ++i)
    if (auto pl = doppler_pseudo_label(det.labels[i], det, mounts, static_cast<int>(i))) t[i] = pl->v;
  return t;
}

StepStats Trainer::detection_step(const FramePairRecord& rec, double angle, bool with_vr, double lr) {
  const Frame det = rotate_frame(keep_newest_scans(rec.pair.det, cfg_.model.n_scans), angle);
  const DetectorInput in = prepare_input(det, cfg_.model);
  auto pass = det_.forward(in, params_);
  std::vector<std::optional<Vec2>> vt;
  if (with_vr) vt = velocity_targets(det, angle);
  const Targets targets = assign_targets(det.labels, pass->out.geometry, vt);
  auto g = OutputGrads<float>::zeros_like(pass->out);
  StepStats st;
  st.det = detection_loss(pass->out, targets, cfg_.loss, with_vr, &g);
  grads_.assign(det_.param_count(), 0.0f);
  det_.backward(*pass, g, grads_);
  std::vector<char> mask = scope_mask(false);
  if (!with_vr)
    for (const auto& v : det_.views())
      if (v.group == ParamGroup::kVelocityOut)
        std::fill(mask.begin() + v.offset, mask.begin() + v.offset + v.size, 0);
  optimizer_step(params_, grads_, adam_, lr, cfg_.adam, &mask);
  st.updated = true;
  return st;
}

StepStats Trainer::velocity_step(const FramePairRecord& rec, double angle, double lr) {
  const Frame det = rotate_frame(keep_newest_scans(rec.pair.det, cfg_.model.n_scans), angle);
  const Frame vel = rotate_frame(keep_newest_scans(rec.pair.vel, cfg_.model.n_scans), angle);

  const DetectorInput det_in = prepare_input(det, cfg_.model);
  std::vector<OBB> det_boxes;
  {
    auto pass = det_.forward(det_in, params_);
    det_boxes = boxes_of(decode_detections(pass->out, cfg_.proposal_threshold, cfg_.nms_radius));
  }
  const DetectorInput vel_in = prepare_input(vel, cfg_.model);
  auto pass = det_.forward(vel_in, params_);
  const auto vel_dets = decode_detections(pass->out, cfg_.proposal_threshold, cfg_.nms_radius);
  const VelocityLoss vl = velocity_loss(boxes_of(vel_dets), det_boxes, cfg_.selfsup);

  StepStats st;
  st.l_vel = vl.value;
  st.matches = static_cast<int>(vl.matches.pairs.size());
  if (vl.no_matches) return st;

  const auto g =
      velocity_output_grads(pass->out, vel_dets, vl, cfg_.gradient_scope == GradientScope::kFull);
  grads_.assign(det_.param_count(), 0.0f);
  det_.backward(*pass, g, grads_);
  const std::vector<char> mask = scope_mask(true);
  optimizer_step(params_, grads_, adam_, lr, cfg_.adam, &mask);
  st.updated = true;
  return st;
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Fisher-Yates with an explicit draw keeps the order identical across
  // standard library implementations.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace

void Trainer::train_phase1(const std::vector<FramePairRecord>& train, const EpochCallback& cb) {
  const bool with_vr = cfg_.supervision == VelocitySupervision::kLabel || cfg_.use_vr_pretrain;
  for (int e = 0; e < cfg_.phase1_epochs; ++e) {
    ++epoch_;
    Rng rng = make_stream(cfg_.seed ^ 0x5048415345310000ULL, static_cast<std::uint64_t>(epoch_));
    EpochMetrics m;
    m.epoch = epoch_;
    m.phase = "phase1";
    int vr_steps = 0;
    for (std::size_t idx : epoch_order(train.size(), rng)) {
      const double angle = draw_angle(rng);
      const StepStats st = detection_step(train[idx], angle, with_vr, cfg_.lr_phase1);
      m.l_cls += st.det.cls;
      m.l_box += st.det.box;
      if (st.det.has_vr) {
        m.l_vr += st.det.vr;
        ++vr_steps;
      }
    }
    if (!train.empty()) {
      m.l_cls /= static_cast<double>(train.size());
      m.l_box /= static_cast<double>(train.size());
    }
    if (vr_steps) m.l_vr /= vr_steps;
    metrics_.push_back(m);
    if (cb) cb(m);
  }
}

void Trainer::train_phase2(const std::vector<FramePairRecord>& train, const EpochCallback& cb) {
  const bool label = cfg_.supervision == VelocitySupervision::kLabel;
  for (int e = 0; e < cfg_.phase2_epochs; ++e) {
    ++epoch_;
    Rng rng = make_stream(cfg_.seed ^ 0x5048415345320000ULL, static_cast<std::uint64_t>(epoch_));
    EpochMetrics m;
    m.epoch = epoch_;
    m.phase = "phase2";
    int vr_steps = 0;
    for (std::size_t idx : epoch_order(train.size(), rng)) {
      const double angle = draw_angle(rng);
      const StepStats st = detection_step(train[idx], angle, label, cfg_.lr_phase2);
      m.l_cls += st.det.cls;
      m.l_box += st.det.box;
      if (st.det.has_vr) {
        m.l_vr += st.det.vr;
        ++vr_steps;
      }
      if (!label) {
        const StepStats vs = velocity_step(train[idx], angle, cfg_.lr_phase2);
        m.l_vel += vs.l_vel;
        m.match_count_mean += vs.matches;
      }
    }
    if (!train.empty()) {
      const double n = static_cast<double>(train.size());
      m.l_cls /= n;
      m.l_box /= n;
      m.l_vel /= n;
      m.match_count_mean /= n;
    }
    if (vr_steps) m.l_vr /= vr_steps;
    metrics_.push_back(m);
    if (cb) cb(m);
  }
}

TrainResult train_model(const TrainConfig& cfg, const Dataset& data, const std::filesystem::path& out_dir,
                        const Trainer::EpochCallback& on_epoch) {
  Trainer t(cfg, data.scenario.sensors);
  TrainResult r;
  t.train_phase1(data.train, on_epoch);
  r.phase1 = t.checkpoint("phase1");
  t.train_phase2(data.train, on_epoch);
  r.final = t.checkpoint("phase2");
  r.metrics = t.metrics();
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_checkpoint(out_dir / "phase1.ckpt", r.phase1);
    save_checkpoint(out_dir / "final.ckpt", r.final);
    write_metrics_csv(out_dir / "metrics.csv", r.metrics);
    std::ofstream cfg_out(out_dir / "train_config.json");
    if (!cfg_out) throw IoError("cannot write " + (out_dir / "train_config.json").string());
    cfg_out << nlohmann::json(cfg).dump(2) << "\n";
  }
  return r;
}

}  // namespace radarvel
