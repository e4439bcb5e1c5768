#include "radarvel/model.hpp"

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "radarvel/simulator.hpp"

namespace radarvel {

GridConfig ModelConfig::output_grid() const {
  GridConfig g = grid;
  g.cell = grid.cell * 2.0;
  return g;
}

ModelConfig compact_model() {
  ModelConfig m;
  m.grid.x_min = m.grid.y_min = -16.0;
  m.grid.x_max = m.grid.y_max = 16.0;
  m.pillar_channels = 4;
  m.stem_channels = 8;
  m.stage_channels = {8, 16, 16, 16};
  m.fpn_channels = 16;
  m.head_channels = 16;
  m.shortcut_channels = 8;
  return m;
}

void ModelConfig::validate() const {
  grid.validate();
  if (grid.width() % 16 != 0 || grid.height() % 16 != 0)
    throw ValidationError("grid width and height must be multiples of 16 cells");
  if (n_scans < 1 || pillar_channels < 1 || stem_channels < 1 || fpn_channels < 1 ||
      head_channels < 1 || shortcut_channels < 1)
    throw ValidationError("model sizes must be positive");
  for (int i = 0; i < 4; ++i)
    if (stage_blocks[i] < 1 || stage_channels[i] < 1)
      throw ValidationError("every stage needs at least one block and channel");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"grid",
        {{"x_min", c.grid.x_min},
         {"x_max", c.grid.x_max},
         {"y_min", c.grid.y_min},
         {"y_max", c.grid.y_max},
         {"cell", c.grid.cell},
         {"max_points_per_pillar", c.grid.max_points_per_pillar}}},
       {"n_scans", c.n_scans},
       {"pillar_channels", c.pillar_channels},
       {"use_temporal_pillars", c.use_temporal_pillars},
       {"use_vr_map", c.use_vr_map},
       {"use_shortcut", c.use_shortcut},
       {"stem_channels", c.stem_channels},
       {"stage_blocks", c.stage_blocks},
       {"stage_channels", c.stage_channels},
       {"fpn_channels", c.fpn_channels},
       {"head_channels", c.head_channels},
       {"shortcut_channels", c.shortcut_channels}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  if (j.contains("preset")) {
    const std::string preset = j["preset"].get<std::string>();
    if (preset == "compact") d = compact_model();
    else if (preset != "default") throw ValidationError("unknown model preset: " + preset);
  }
  c.grid = d.grid;
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    c.grid.x_min = g.value("x_min", d.grid.x_min);
    c.grid.x_max = g.value("x_max", d.grid.x_max);
    c.grid.y_min = g.value("y_min", d.grid.y_min);
    c.grid.y_max = g.value("y_max", d.grid.y_max);
    c.grid.cell = g.value("cell", d.grid.cell);
    c.grid.max_points_per_pillar = g.value("max_points_per_pillar", d.grid.max_points_per_pillar);
  }
  c.n_scans = j.value("n_scans", d.n_scans);
  c.pillar_channels = j.value("pillar_channels", d.pillar_channels);
  c.use_temporal_pillars = j.value("use_temporal_pillars", d.use_temporal_pillars);
  c.use_vr_map = j.value("use_vr_map", d.use_vr_map);
  c.use_shortcut = j.value("use_shortcut", d.use_shortcut);
  c.stem_channels = j.value("stem_channels", d.stem_channels);
  c.stage_blocks = j.value("stage_blocks", d.stage_blocks);
  c.stage_channels = j.value("stage_channels", d.stage_channels);
  c.fpn_channels = j.value("fpn_channels", d.fpn_channels);
  c.head_channels = j.value("head_channels", d.head_channels);
  c.shortcut_channels = j.value("shortcut_channels", d.shortcut_channels);
}

DetectorInput prepare_input(const Frame& frame, const ModelConfig& cfg) {
  DetectorInput in;
  if (cfg.use_temporal_pillars) {
    if (static_cast<int>(frame.scans.size()) != cfg.n_scans)
      throw ShapeMismatch("frame scan count does not match the model");
    for (int k = 0; k < cfg.n_scans; ++k)
      in.blocks.push_back(bucketize(frame.scans[cfg.n_scans - 1 - k].points, cfg.grid));
  } else {
    std::vector<RadarPoint> merged;
    merged.reserve(frame.point_count());
    for (const auto& s : frame.scans) merged.insert(merged.end(), s.points.begin(), s.points.end());
    in.blocks.push_back(bucketize(merged, cfg.grid));
  }
  in.vr = vr_map(frame, cfg.grid);
  return in;
}

template <typename T>
ConvSpec Detector<T>::add_conv(const std::string& name, ParamGroup group, int cin, int cout, int k,
                               int stride) {
  ConvSpec s;
  s.cin = cin;
  s.cout = cout;
  s.k = k;
  s.stride = stride;
  s.w_off = count_;
  const std::size_t fan_in = static_cast<std::size_t>(cin) * k * k;
  views_.push_back({name + ".weight", group, count_, s.weight_count(), fan_in, false});
  count_ += s.weight_count();
  s.b_off = count_;
  views_.push_back({name + ".bias", group, count_, static_cast<std::size_t>(cout), fan_in, true});
  count_ += cout;
  return s;
}

template <typename T>
Detector<T>::Detector(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int P = cfg_.pillar_channels;
  pillar_.channels = P;
  pillar_.total_channels = cfg_.pillar_blocks() * P;
  pillar_.w_off = count_;
  views_.push_back({"encoder.weight", ParamGroup::kEncoder, count_,
                    static_cast<std::size_t>(kPillarFeatures) * P, kPillarFeatures, false});
  count_ += static_cast<std::size_t>(kPillarFeatures) * P;
  pillar_.b_off = count_;
  views_.push_back({"encoder.bias", ParamGroup::kEncoder, count_, static_cast<std::size_t>(P),
                    kPillarFeatures, true});
  count_ += P;

  stem_ = add_conv("stem", ParamGroup::kBackbone, cfg_.input_channels(), cfg_.stem_channels, 3, 2);
  int cin = cfg_.stem_channels;
  for (int s = 0; s < 4; ++s) {
    const int cout = cfg_.stage_channels[s];
    const int mid = std::max(cout / 2, 2);
    for (int b = 0; b < cfg_.stage_blocks[s]; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      const std::string name = "stage" + std::to_string(s + 2) + "." + std::to_string(b);
      Block blk;
      blk.reduce = add_conv(name + ".reduce", ParamGroup::kBackbone, cin, mid, 1, 1);
      blk.spatial = add_conv(name + ".spatial", ParamGroup::kBackbone, mid, mid, 3, stride);
      blk.expand = add_conv(name + ".expand", ParamGroup::kBackbone, mid, cout, 1, 1);
      if (cin != cout || stride != 1) {
        blk.has_proj = true;
        blk.proj = add_conv(name + ".proj", ParamGroup::kBackbone, cin, cout, 1, stride);
      }
      stages_[s].push_back(blk);
      cin = cout;
    }
  }
  for (int s = 0; s < 4; ++s)
    lateral_[s] = add_conv("fpn.lateral" + std::to_string(s + 2), ParamGroup::kBackbone,
                           cfg_.stage_channels[s], cfg_.fpn_channels, 1, 1);
  if (cfg_.use_shortcut) {
    sc_conv_ = add_conv("shortcut.conv", ParamGroup::kShortcut, 1, cfg_.shortcut_channels, 3, 1);
    sc_bottleneck_ = add_conv("shortcut.bottleneck", ParamGroup::kShortcut, cfg_.shortcut_channels, 1, 1, 1);
  }
  head0_ = add_conv("head.conv0", ParamGroup::kHeadShared, cfg_.fpn_channels, cfg_.head_channels, 3, 1);
  head1_ = add_conv("head.conv1", ParamGroup::kHeadShared, cfg_.head_channels, cfg_.head_channels, 3, 1);
  cls_out_ = add_conv("head.cls", ParamGroup::kClassOut, cfg_.head_channels, 2, 1, 1);
  box_out_ = add_conv("head.box", ParamGroup::kBoxOut, cfg_.head_channels, 8, 1, 1);
  vel_out_ = add_conv("head.vel", ParamGroup::kVelocityOut, cfg_.head_channels, 2, 3, 1);
}

template <typename T>
ModelParams<T> Detector<T>::init(std::uint64_t seed) const {
  ModelParams<T> p;
  p.values.assign(count_, T(0));
  Rng rng = make_stream(seed, 0x5eed1417ULL);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  // Rough input scales of the nine point features.
  const std::array<double, kPillarFeatures> feature_scale{0.1, 0.1, 1.0, 0.2, 0.1, 2.0, 4.0, 4.0, 1.0};
  for (const auto& v : views_) {
    if (v.is_bias) continue;
    const double bound = std::sqrt(6.0 / static_cast<double>(v.fan_in));
    const bool zero_branch = v.name.ends_with(".expand.weight");
    double gain = 1.0;
    if (v.group == ParamGroup::kClassOut || v.group == ParamGroup::kBoxOut ||
        v.group == ParamGroup::kVelocityOut)
      gain = 0.1;
    for (std::size_t i = 0; i < v.size; ++i) {
      double w = unit(rng) * bound * gain;
      if (v.group == ParamGroup::kEncoder) w *= feature_scale[i / cfg_.pillar_channels];
      if (zero_branch) w = 0.0;
      p.values[v.offset + i] = static_cast<T>(w);
    }
  }
  p.values[cls_out_.b_off + 1] = static_cast<T>(std::log(0.01 / 0.99));
  return p;
}

template <typename T>
std::unique_ptr<ForwardPass<T>> Detector<T>::forward(const DetectorInput& in,
                                                     const ModelParams<T>& p) const {
  if (p.values.size() != count_) throw ShapeMismatch("parameter vector size mismatch");
  if (static_cast<int>(in.blocks.size()) != cfg_.pillar_blocks())
    throw ShapeMismatch("pillar block count does not match the model");
  if (in.vr.channels != 1 || in.vr.width != cfg_.grid.width() || in.vr.height != cfg_.grid.height())
    throw ShapeMismatch("v_r map shape does not match the grid");
  auto pass = std::make_unique<ForwardPass<T>>(p.values);
  auto& tp = pass->tape;
  std::vector<PillarBlock> blocks;
  for (std::size_t k = 0; k < in.blocks.size(); ++k)
    blocks.push_back({&in.blocks[k], static_cast<int>(k) * cfg_.pillar_channels});
  const int pillars = tp.pillars(pillar_, std::move(blocks), cfg_.grid.height(), cfg_.grid.width());
  const int vr = tp.constant(to_tensor<T>(in.vr));
  return run(std::move(pass), pillars, vr);
}

template <typename T>
std::unique_ptr<ForwardPass<T>> Detector<T>::forward_grid(const Tensor<T>& grid, const Tensor<T>& vr,
                                                          const ModelParams<T>& p) const {
  if (p.values.size() != count_) throw ShapeMismatch("parameter vector size mismatch");
  if (grid.c != pillar_.total_channels || grid.h != cfg_.grid.height() || grid.w != cfg_.grid.width())
    throw ShapeMismatch("pillar grid shape does not match the model");
  if (vr.c != 1 || vr.h != grid.h || vr.w != grid.w) throw ShapeMismatch("v_r map shape mismatch");
  auto pass = std::make_unique<ForwardPass<T>>(p.values);
  const int g = pass->tape.constant(grid);
  const int v = pass->tape.constant(vr);
  return run(std::move(pass), g, v);
}

template <typename T>
std::unique_ptr<ForwardPass<T>> Detector<T>::run(std::unique_ptr<ForwardPass<T>> pass, int pillars,
                                                 int vr) const {
  auto& tp = pass->tape;
  const int x0 = cfg_.use_vr_map ? tp.concat({pillars, vr}) : pillars;
  int x = tp.relu(tp.conv(x0, stem_));
  std::array<int, 4> stage_out{};
  for (int s = 0; s < 4; ++s) {
    for (const Block& b : stages_[s]) {
      const int r = tp.relu(tp.conv(x, b.reduce));
      const int sp = tp.relu(tp.conv(r, b.spatial));
      const int e = tp.conv(sp, b.expand);
      const int skip = b.has_proj ? tp.conv(x, b.proj) : x;
      x = tp.relu(tp.add(e, skip));
    }
    stage_out[s] = x;
  }
  int f = tp.conv(stage_out[3], lateral_[3]);
  for (int s = 2; s >= 0; --s) f = tp.add(tp.upsample2(f), tp.conv(stage_out[s], lateral_[s]));

  if (cfg_.use_shortcut) {
    Tensor<T> norm = tp.value(vr);
    for (auto& v : norm.v) v = std::clamp(v, T(-50), T(50)) / T(50);
    const int n = tp.constant(std::move(norm));
    const int s = tp.maxpool2(tp.conv(tp.conv(n, sc_conv_), sc_bottleneck_));
    f = tp.add_broadcast(f, s);
  }
  const int h = tp.relu(tp.conv(tp.relu(tp.conv(f, head0_)), head1_));
  pass->cls_id = tp.conv(h, cls_out_);
  pass->box_id = tp.conv(h, box_out_);
  pass->vel_id = tp.conv(h, vel_out_);

  auto& out = pass->out;
  out.geometry = cfg_.output_grid();
  out.cls_logits = tp.value(pass->cls_id);
  out.box = tp.value(pass->box_id);
  out.vel = tp.value(pass->vel_id);
  out.cls_prob = out.cls_logits;
  const std::size_t plane = out.cls_logits.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    const T a = out.cls_logits.v[i], b = out.cls_logits.v[plane + i];
    const T m = std::max(a, b);
    const T ea = std::exp(a - m), eb = std::exp(b - m);
    out.cls_prob.v[i] = ea / (ea + eb);
    out.cls_prob.v[plane + i] = eb / (ea + eb);
  }
  return pass;
}

template <typename T>
void Detector<T>::backward(ForwardPass<T>& pass, const OutputGrads<T>& g, std::vector<T>& grads) const {
  if (grads.size() != count_) grads.assign(count_, T(0));
  pass.tape.seed_grad(pass.cls_id, g.cls_logits);
  pass.tape.seed_grad(pass.box_id, g.box);
  pass.tape.seed_grad(pass.vel_id, g.vel);
  pass.tape.backward(grads);
}

template class Detector<float>;
template class Detector<double>;

}  // namespace radarvel
