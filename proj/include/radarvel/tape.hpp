#pragma once

// Reverse-mode differentiation over single-image CHW tensors. Nodes are
// appended in forward order; backward() walks them in reverse and
// accumulates parameter gradients into a flat vector aligned with the
// parameter vector.

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "radarvel/render.hpp"

namespace radarvel {

// Eigen's vectorized kernels peel elements up to the first aligned address,
// so buffers they read are allocated at its maximum alignment to keep the
// summation order independent of the heap layout.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct Tensor {
  int c = 0, h = 0, w = 0;
  AlignedVector<T> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, T(0)) {}
  std::size_t size() const { return v.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
  T at(int ci, int y, int x) const { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
};

struct ConvSpec {
  int cin = 0, cout = 0, k = 3, stride = 1;
  std::size_t w_off = 0;  // [cout x cin*k*k] row-major
  std::size_t b_off = 0;  // [cout]
  bool bias = true;

  int pad() const { return k / 2; }
  std::size_t weight_count() const { return static_cast<std::size_t>(cout) * cin * k * k; }
  int out_size(int n) const { return (n + 2 * pad() - k) / stride + 1; }
};

/// Pillar encoder inputs for one channel block of the grid.
struct PillarBlock {
  const PillarBuckets* buckets = nullptr;
  int channel_offset = 0;
};

struct PillarSpec {
  int channels = 0;        // encoder output channels per block
  int total_channels = 0;  // channels of the rendered grid
  std::size_t w_off = 0;   // [kPillarFeatures x channels]
  std::size_t b_off = 0;
};

template <typename T>
class Tape {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;

  explicit Tape(std::span<const T> params) : params_(params) {}

  int constant(Tensor<T> t) { return push(Op::kConstant, {}, std::move(t)); }

  int pillars(const PillarSpec& spec, std::vector<PillarBlock> blocks, int h, int w) {
    Tensor<T> out(spec.total_channels, h, w);
    Node n;
    n.op = Op::kPillars;
    n.pillar = spec;
    n.blocks = std::move(blocks);
    BasicPillarEncoderParams<T> enc;
    enc.out_channels = spec.channels;
    enc.weights.assign(params_.begin() + spec.w_off,
                       params_.begin() + spec.w_off + kPillarFeatures * spec.channels);
    enc.bias.assign(params_.begin() + spec.b_off, params_.begin() + spec.b_off + spec.channels);
    n.argmax.resize(n.blocks.size());
    for (std::size_t b = 0; b < n.blocks.size(); ++b)
      encode_pillars(*n.blocks[b].buckets, enc, out.data() + n.blocks[b].channel_offset * out.plane(),
                     &n.argmax[b]);
    n.value = std::move(out);
    return push(std::move(n));
  }

  int conv(int x, const ConvSpec& spec) {
    const Tensor<T>& in = nodes_[x].value;
    assert(in.c == spec.cin);
    const int ho = spec.out_size(in.h), wo = spec.out_size(in.w);
    Tensor<T> out(spec.cout, ho, wo);
    Node n;
    n.op = Op::kConv;
    n.inputs = {x};
    n.conv = spec;
    const std::size_t K = static_cast<std::size_t>(spec.cin) * spec.k * spec.k;
    const std::size_t P = static_cast<std::size_t>(ho) * wo;
    const Mat weight = CMapM(params_.data() + spec.w_off, spec.cout, static_cast<Eigen::Index>(K));
    MapM y(out.data(), spec.cout, static_cast<Eigen::Index>(P));
    if (direct(spec)) {
      CMapM cols(in.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
      y.noalias() = weight * cols;
    } else {
      n.cols.resize(K * P);
      im2col(in, spec, ho, wo, n.cols.data());
      CMapM cols(n.cols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
      y.noalias() = weight * cols;
    }
    if (spec.bias) {
      for (int co = 0; co < spec.cout; ++co) y.row(co).array() += params_[spec.b_off + co];
    }
    n.value = std::move(out);
    return push(std::move(n));
  }

  int relu(int x) {
    Tensor<T> out = nodes_[x].value;
    for (auto& v : out.v) v = v > T(0) ? v : T(0);
    return push(Op::kRelu, {x}, std::move(out));
  }

  int add(int a, int b) {
    Tensor<T> out = nodes_[a].value;
    const auto& vb = nodes_[b].value.v;
    assert(vb.size() == out.v.size());
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += vb[i];
    return push(Op::kAdd, {a, b}, std::move(out));
  }

  /// x [C,H,W] plus a one-channel map broadcast over channels.
  int add_broadcast(int x, int s) {
    Tensor<T> out = nodes_[x].value;
    const auto& sv = nodes_[s].value;
    assert(sv.c == 1 && sv.h == out.h && sv.w == out.w);
    const std::size_t plane = out.plane();
    for (int c = 0; c < out.c; ++c)
      for (std::size_t i = 0; i < plane; ++i) out.v[c * plane + i] += sv.v[i];
    return push(Op::kAddBroadcast, {x, s}, std::move(out));
  }

  int upsample2(int x) {
    const auto& in = nodes_[x].value;
    Tensor<T> out(in.c, in.h * 2, in.w * 2);
    for (int c = 0; c < in.c; ++c)
      for (int yy = 0; yy < out.h; ++yy)
        for (int xx = 0; xx < out.w; ++xx) out.at(c, yy, xx) = in.at(c, yy / 2, xx / 2);
    return push(Op::kUpsample2, {x}, std::move(out));
  }

  int maxpool2(int x) {
    const auto& in = nodes_[x].value;
    Tensor<T> out(in.c, in.h / 2, in.w / 2);
    Node n;
    n.op = Op::kMaxPool2;
    n.inputs = {x};
    n.argmax.assign(1, std::vector<int>(out.size()));
    std::size_t o = 0;
    for (int c = 0; c < out.c; ++c)
      for (int yy = 0; yy < out.h; ++yy)
        for (int xx = 0; xx < out.w; ++xx, ++o) {
          int best = -1;
          T bv = T(0);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int idx = (c * in.h + 2 * yy + dy) * in.w + 2 * xx + dx;
              if (best < 0 || in.v[idx] > bv) {
                best = idx;
                bv = in.v[idx];
              }
            }
          out.v[o] = bv;
          n.argmax[0][o] = best;
        }
    n.value = std::move(out);
    return push(std::move(n));
  }

  int concat(const std::vector<int>& xs) {
    int c = 0;
    for (int x : xs) c += nodes_[x].value.c;
    const auto& first = nodes_[xs.front()].value;
    Tensor<T> out(c, first.h, first.w);
    std::size_t off = 0;
    for (int x : xs) {
      const auto& v = nodes_[x].value.v;
      std::copy(v.begin(), v.end(), out.v.begin() + off);
      off += v.size();
    }
    return push(Op::kConcat, xs, std::move(out));
  }

  const Tensor<T>& value(int id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(node) for the given node; call before backward().
  void seed_grad(int id, const Tensor<T>& g) {
    ensure_grads();
    auto& dst = grads_[id].v;
    assert(dst.size() == g.v.size());
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.v[i];
  }

  /// Accumulates parameter gradients into `param_grads` (same layout as the
  /// parameter vector).
  void backward(std::span<T> param_grads) {
    ensure_grads();
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[id];
      Tensor<T>& g = grads_[id];
      if (n.op == Op::kConstant) continue;
      if (!nonzero(g)) continue;
      switch (n.op) {
        case Op::kConstant:
          break;
        case Op::kPillars:
          backward_pillars(n, g, param_grads);
          break;
        case Op::kConv:
          backward_conv(n, g, param_grads);
          break;
        case Op::kRelu: {
          auto& dx = grads_[n.inputs[0]].v;
          for (std::size_t i = 0; i < g.v.size(); ++i)
            if (n.value.v[i] > T(0)) dx[i] += g.v[i];
          break;
        }
        case Op::kAdd:
          for (int in : n.inputs) {
            auto& dx = grads_[in].v;
            for (std::size_t i = 0; i < g.v.size(); ++i) dx[i] += g.v[i];
          }
          break;
        case Op::kAddBroadcast: {
          auto& dx = grads_[n.inputs[0]].v;
          auto& ds = grads_[n.inputs[1]].v;
          const std::size_t plane = g.plane();
          for (int c = 0; c < g.c; ++c)
            for (std::size_t i = 0; i < plane; ++i) {
              dx[c * plane + i] += g.v[c * plane + i];
              ds[i] += g.v[c * plane + i];
            }
          break;
        }
        case Op::kUpsample2: {
          auto& dx = grads_[n.inputs[0]];
          for (int c = 0; c < g.c; ++c)
            for (int yy = 0; yy < g.h; ++yy)
              for (int xx = 0; xx < g.w; ++xx) dx.at(c, yy / 2, xx / 2) += g.at(c, yy, xx);
          break;
        }
        case Op::kMaxPool2: {
          auto& dx = grads_[n.inputs[0]].v;
          for (std::size_t o = 0; o < g.v.size(); ++o) dx[n.argmax[0][o]] += g.v[o];
          break;
        }
        case Op::kConcat: {
          std::size_t off = 0;
          for (int in : n.inputs) {
            auto& dx = grads_[in].v;
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g.v[off + i];
            off += dx.size();
          }
          break;
        }
      }
    }
  }

 private:
  enum class Op { kConstant, kPillars, kConv, kRelu, kAdd, kAddBroadcast, kUpsample2, kMaxPool2, kConcat };

  struct Node {
    Op op = Op::kConstant;
    std::vector<int> inputs;
    Tensor<T> value;
    ConvSpec conv;
    AlignedVector<T> cols;
    PillarSpec pillar;
    std::vector<PillarBlock> blocks;
    std::vector<std::vector<int>> argmax;
  };

  static bool direct(const ConvSpec& s) { return s.k == 1 && s.stride == 1; }

  static bool nonzero(const Tensor<T>& g) {
    return std::any_of(g.v.begin(), g.v.end(), [](T v) { return v != T(0); });
  }

  int push(Op op, std::vector<int> inputs, Tensor<T> value) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    return push(std::move(n));
  }

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void ensure_grads() {
    while (grads_.size() < nodes_.size()) {
      const auto& v = nodes_[grads_.size()].value;
      grads_.emplace_back(v.c, v.h, v.w);
    }
  }

  static void im2col(const Tensor<T>& in, const ConvSpec& s, int ho, int wo, T* cols) {
    const int k = s.k, pad = s.pad(), st = s.stride;
    std::size_t row = 0;
    for (int c = 0; c < in.c; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++row) {
          T* dst = cols + row * static_cast<std::size_t>(ho) * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * st - pad + ky;
            T* d = dst + static_cast<std::size_t>(oy) * wo;
            if (iy < 0 || iy >= in.h) {
              std::fill(d, d + wo, T(0));
              continue;
            }
            const T* src = in.data() + (static_cast<std::size_t>(c) * in.h + iy) * in.w;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * st - pad + kx;
              d[ox] = (ix < 0 || ix >= in.w) ? T(0) : src[ix];
            }
          }
        }
  }

  static void col2im(const T* cols, const ConvSpec& s, int ho, int wo, Tensor<T>& dx) {
    const int k = s.k, pad = s.pad(), st = s.stride;
    std::size_t row = 0;
    for (int c = 0; c < dx.c; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++row) {
          const T* srcr = cols + row * static_cast<std::size_t>(ho) * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * st - pad + ky;
            if (iy < 0 || iy >= dx.h) continue;
            T* d = dx.data() + (static_cast<std::size_t>(c) * dx.h + iy) * dx.w;
            const T* sr = srcr + static_cast<std::size_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * st - pad + kx;
              if (ix >= 0 && ix < dx.w) d[ix] += sr[ox];
            }
          }
        }
  }

  void backward_conv(Node& n, const Tensor<T>& g, std::span<T> pg) {
    const ConvSpec& s = n.conv;
    const Tensor<T>& in = nodes_[n.inputs[0]].value;
    const auto K = static_cast<Eigen::Index>(s.cin * s.k * s.k);
    const auto P = static_cast<Eigen::Index>(g.plane());
    CMapM dy(g.data(), s.cout, P);
    const T* cols_ptr = direct(s) ? in.data() : n.cols.data();
    CMapM cols(cols_ptr, K, P);
    const Mat dw = dy * cols.transpose();
    for (Eigen::Index i = 0; i < dw.size(); ++i) pg[s.w_off + i] += dw.data()[i];
    if (s.bias) {
      for (int co = 0; co < s.cout; ++co) {
        const T* row = g.data() + static_cast<std::size_t>(co) * P;
        T sum = T(0);
        for (Eigen::Index i = 0; i < P; ++i) sum += row[i];
        pg[s.b_off + co] += sum;
      }
    }

    const int src = n.inputs[0];
    if (nodes_[src].op == Op::kConstant) return;
    const Mat weight = CMapM(params_.data() + s.w_off, s.cout, K);
    if (direct(s)) {
      MapM dx(grads_[src].data(), K, P);
      dx.noalias() += weight.transpose() * dy;
    } else {
      Mat dcols = weight.transpose() * dy;
      col2im(dcols.data(), s, g.h, g.w, grads_[src]);
    }
  }

  void backward_pillars(const Node& n, const Tensor<T>& g, std::span<T> pg) {
    const int C = n.pillar.channels;
    const std::size_t plane = g.plane();
    for (std::size_t b = 0; b < n.blocks.size(); ++b) {
      const PillarBuckets& bk = *n.blocks[b].buckets;
      const std::size_t base = static_cast<std::size_t>(n.blocks[b].channel_offset) * plane;
      for (std::size_t p = 0; p < bk.cells.size(); ++p) {
        for (int c = 0; c < C; ++c) {
          const int who = n.argmax[b][p * C + c];
          if (who < 0) continue;
          const T gv = g.v[base + c * plane + bk.cells[p]];
          if (gv == T(0)) continue;
          const auto& f = bk.features[p][who];
          for (int k = 0; k < kPillarFeatures; ++k)
            pg[n.pillar.w_off + k * C + c] += gv * static_cast<T>(f[k]);
          pg[n.pillar.b_off + c] += gv;
        }
      }
    }
  }

  std::span<const T> params_;
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

}  // namespace radarvel
