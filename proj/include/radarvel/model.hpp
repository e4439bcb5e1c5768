#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "radarvel/render.hpp"
#include "radarvel/tape.hpp"

namespace radarvel {

class ShapeMismatch : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct ModelConfig {
  GridConfig grid;
  int n_scans = 7;
  int pillar_channels = 8;
  bool use_temporal_pillars = true;
  bool use_vr_map = true;     // v_r channel appended to the backbone input
  bool use_shortcut = true;   // v_r bypass into the pre-head map
  int stem_channels = 16;
  std::array<int, 4> stage_blocks{3, 6, 6, 3};
  std::array<int, 4> stage_channels{16, 32, 32, 32};
  int fpn_channels = 32;
  int head_channels = 32;
  int shortcut_channels = 16;

  int pillar_blocks() const { return use_temporal_pillars ? n_scans : 1; }
  int input_channels() const { return pillar_blocks() * pillar_channels + (use_vr_map ? 1 : 0); }
  /// Output map geometry: stride 2 over the input grid.
  GridConfig output_grid() const;
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
/// "preset": "compact" starts from compact_model(); other keys override it.
void from_json(const nlohmann::json& j, ModelConfig& cfg);

/// Narrow detector on a +-16 m grid covering the default scenario; sized so
/// a full two-phase run on 400 frame pairs takes about two minutes on one core.
ModelConfig compact_model();

/// Which output head a parameter belongs to; used for gradient scoping.
enum class ParamGroup { kEncoder, kBackbone, kShortcut, kHeadShared, kClassOut, kBoxOut, kVelocityOut };

struct ParamView {
  std::string name;
  ParamGroup group = ParamGroup::kBackbone;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::size_t fan_in = 1;
  bool is_bias = false;
};

template <typename T>
struct ModelParams {
  std::vector<T> values;
  std::size_t size() const { return values.size(); }
};

/// Network input independent of the trainable weights.
struct DetectorInput {
  std::vector<PillarBuckets> blocks;  // newest scan first
  GridTensor vr;                      // raw v_r map
};

DetectorInput prepare_input(const Frame& frame, const ModelConfig& cfg);

template <typename T>
struct DenseOutput {
  GridConfig geometry;  // output cells
  Tensor<T> cls_logits;  // [2,H,W] (background, foreground)
  Tensor<T> cls_prob;    // softmax of cls_logits
  Tensor<T> box;         // [8,H,W]
  Tensor<T> vel;         // [2,H,W]
};

/// Gradients of a scalar loss with respect to the dense outputs.
template <typename T>
struct OutputGrads {
  Tensor<T> cls_logits, box, vel;

  static OutputGrads zeros_like(const DenseOutput<T>& o) {
    OutputGrads g;
    g.cls_logits = Tensor<T>(o.cls_logits.c, o.cls_logits.h, o.cls_logits.w);
    g.box = Tensor<T>(o.box.c, o.box.h, o.box.w);
    g.vel = Tensor<T>(o.vel.c, o.vel.h, o.vel.w);
    return g;
  }
};

template <typename T>
class ForwardPass {
 public:
  explicit ForwardPass(std::span<const T> params) : tape(params) {}
  Tape<T> tape;
  int cls_id = -1, box_id = -1, vel_id = -1;
  DenseOutput<T> out;
};

/// Compact grid detector: pillar encoder, residual backbone with a feature
/// pyramid, v_r bypass, and a class/box/velocity head at output stride 2.
template <typename T>
class Detector {
 public:
  explicit Detector(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::size_t param_count() const { return count_; }
  const std::vector<ParamView>& views() const { return views_; }

  /// He-uniform weights, zero biases, zero-initialized last conv of every
  /// residual branch, class bias set for an initial foreground prior of 0.01.
  ModelParams<T> init(std::uint64_t seed) const;

  /// Full forward from point buckets (pillar encoder included).
  std::unique_ptr<ForwardPass<T>> forward(const DetectorInput& in, const ModelParams<T>& p) const;

  /// Forward from an already rendered pillar grid (encoder bypassed).
  std::unique_ptr<ForwardPass<T>> forward_grid(const Tensor<T>& pillar_grid, const Tensor<T>& vr,
                                               const ModelParams<T>& p) const;

  /// Accumulates parameter gradients of the loss whose output gradients are
  /// `g` into `grads` (resized and zeroed if empty).
  void backward(ForwardPass<T>& pass, const OutputGrads<T>& g, std::vector<T>& grads) const;

 private:
  struct Block {
    ConvSpec reduce, spatial, expand;
    bool has_proj = false;
    ConvSpec proj;
  };

  ConvSpec add_conv(const std::string& name, ParamGroup group, int cin, int cout, int k, int stride);
  std::unique_ptr<ForwardPass<T>> run(std::unique_ptr<ForwardPass<T>> pass, int input_id, int vr_id) const;

  ModelConfig cfg_;
  std::size_t count_ = 0;
  std::vector<ParamView> views_;
  PillarSpec pillar_;
  ConvSpec stem_;
  std::array<std::vector<Block>, 4> stages_;
  std::array<ConvSpec, 4> lateral_;
  ConvSpec sc_conv_, sc_bottleneck_;
  ConvSpec head0_, head1_, cls_out_, box_out_, vel_out_;
};

extern template class Detector<float>;
extern template class Detector<double>;

template <typename T>
Tensor<T> to_tensor(const GridTensor& g) {
  Tensor<T> t(g.channels, g.height, g.width);
  for (std::size_t i = 0; i < g.data.size(); ++i) t.v[i] = static_cast<T>(g.data[i]);
  return t;
}

/// Parameters converted between precisions (for gradient checks).
template <typename To, typename From>
ModelParams<To> convert_params(const ModelParams<From>& p) {
  ModelParams<To> out;
  out.values.assign(p.values.begin(), p.values.end());
  return out;
}

}  // namespace radarvel
