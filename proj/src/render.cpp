#include "radarvel/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace radarvel {

int GridConfig::width() const { return static_cast<int>(std::lround((x_max - x_min) / cell)); }
int GridConfig::height() const { return static_cast<int>(std::lround((y_max - y_min) / cell)); }

void GridConfig::validate() const {
  if (!(cell > 0.0)) throw ValidationError("grid cell must be positive");
  if (!(x_max > x_min && y_max > y_min)) throw ValidationError("grid extent must be non-empty");
  const double wx = (x_max - x_min) / cell, wy = (y_max - y_min) / cell;
  if (std::abs(wx - std::round(wx)) > 1e-9 || std::abs(wy - std::round(wy)) > 1e-9)
    throw ValidationError("grid extent must be divisible by the cell size");
  if (max_points_per_pillar < 1) throw ValidationError("max_points_per_pillar must be >= 1");
}

int GridConfig::cell_index(double x, double y) const {
  const double fx = std::floor((x - x_min) / cell);
  const double fy = std::floor((y - y_min) / cell);
  if (!(fx >= 0.0 && fy >= 0.0)) return -1;
  const int col = static_cast<int>(fx), row = static_cast<int>(fy);
  if (col >= width() || row >= height()) return -1;
  return row * width() + col;
}

Vec2 GridConfig::cell_center(int row, int col) const {
  return {x_min + (col + 0.5) * cell, y_min + (row + 0.5) * cell};
}

PillarBuckets bucketize(std::span<const RadarPoint> points, const GridConfig& cfg) {
  using Feature = std::array<double, kPillarFeatures>;
  std::map<int, std::vector<std::pair<double, Feature>>> by_cell;
  const int w = cfg.width();
  for (const auto& p : points) {
    const int idx = cfg.cell_index(p.pos.x(), p.pos.y());
    if (idx < 0) continue;
    const Vec2 c = cfg.cell_center(idx / w, idx % w);
    const double ox = p.pos.x() - c.x(), oy = p.pos.y() - c.y();
    Feature f{p.pos.x(), p.pos.y(), p.pos.z(), p.vr, p.rcs, p.dt, ox, oy, 0.0};
    by_cell[idx].emplace_back(ox * ox + oy * oy, f);
  }

  PillarBuckets out;
  out.geometry = cfg;
  out.cells.reserve(by_cell.size());
  out.features.reserve(by_cell.size());
  const auto cap = static_cast<std::size_t>(cfg.max_points_per_pillar);
  for (auto& [idx, pts] : by_cell) {
    std::sort(pts.begin(), pts.end());
    if (pts.size() > cap) pts.resize(cap);
    const double count = static_cast<double>(pts.size()) / static_cast<double>(cap);
    std::vector<Feature> feats;
    feats.reserve(pts.size());
    for (auto& [d, f] : pts) {
      f[8] = count;
      feats.push_back(f);
    }
    out.cells.push_back(idx);
    out.features.push_back(std::move(feats));
  }
  return out;
}

template <typename T>
void encode_pillars(const PillarBuckets& buckets, const BasicPillarEncoderParams<T>& enc,
                    T* out, std::vector<int>* argmax) {
  const int C = enc.out_channels;
  const std::size_t plane =
      static_cast<std::size_t>(buckets.geometry.width()) * buckets.geometry.height();
  if (argmax) argmax->assign(static_cast<std::size_t>(C) * buckets.cells.size(), -1);
  for (std::size_t b = 0; b < buckets.cells.size(); ++b) {
    const std::size_t cell = static_cast<std::size_t>(buckets.cells[b]);
    const auto& feats = buckets.features[b];
    for (int c = 0; c < C; ++c) {
      T best = T(0);
      int who = -1;
      for (std::size_t i = 0; i < feats.size(); ++i) {
        T v = enc.bias[c];
        for (int k = 0; k < kPillarFeatures; ++k)
          v += static_cast<T>(feats[i][k]) * enc.weights[k * C + c];
        if (v > best) {
          best = v;
          who = static_cast<int>(i);
        }
      }
      out[c * plane + cell] = best;
      if (argmax) (*argmax)[b * C + c] = who;
    }
  }
}

template void encode_pillars<float>(const PillarBuckets&, const BasicPillarEncoderParams<float>&,
                                    float*, std::vector<int>*);
template void encode_pillars<double>(const PillarBuckets&, const BasicPillarEncoderParams<double>&,
                                     double*, std::vector<int>*);

GridTensor pillarize(const Scan& scan, const GridConfig& cfg, const PillarEncoderParams& enc) {
  cfg.validate();
  GridTensor out(enc.out_channels, cfg);
  encode_pillars(bucketize(scan.points, cfg), enc, out.data.data(), nullptr);
  return out;
}

GridTensor temporal_pillars(const Frame& frame, const GridConfig& cfg,
                            const PillarEncoderParams& enc) {
  if (frame.scans.empty()) throw ValidationError("frame has no scans");
  cfg.validate();
  const int n = static_cast<int>(frame.scans.size());
  GridTensor out(n * enc.out_channels, cfg);
  const std::size_t block = static_cast<std::size_t>(enc.out_channels) * out.plane();
  for (int k = 0; k < n; ++k) {
    const Scan& scan = frame.scans[n - 1 - k];  // newest first
    encode_pillars(bucketize(scan.points, cfg), enc, out.data.data() + k * block, nullptr);
  }
  return out;
}

GridTensor vr_map(const Frame& frame, const GridConfig& cfg) {
  cfg.validate();
  GridTensor out(1, cfg);
  for (const auto& scan : frame.scans) {
    for (const auto& p : scan.points) {
      const int idx = cfg.cell_index(p.pos.x(), p.pos.y());
      if (idx < 0) continue;
      float& v = out.data[idx];
      const float vr = static_cast<float>(p.vr);
      if (std::abs(vr) > std::abs(v) || (std::abs(vr) == std::abs(v) && vr > v)) v = vr;
    }
  }
  return out;
}

GridTensor vr_shortcut_input(const GridTensor& m) {
  if (m.channels != 1) throw ValidationError("v_r map must have one channel");
  GridTensor out = m;
  for (auto& v : out.data) v = std::clamp(v, -50.0f, 50.0f) / 50.0f;
  return out;
}

void write_channel_csv(const GridTensor& t, int channel, const std::filesystem::path& path) {
  if (channel < 0 || channel >= t.channels) throw ValidationError("channel out of range");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  char buf[32];
  for (int r = 0; r < t.height; ++r) {
    for (int c = 0; c < t.width; ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(t.at(channel, r, c)));
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

PillarEncoderParams make_selector_encoder(int out_channels, int feature, int channel) {
  PillarEncoderParams enc;
  enc.out_channels = out_channels;
  enc.weights.assign(static_cast<std::size_t>(kPillarFeatures) * out_channels, 0.0f);
  enc.bias.assign(out_channels, 0.0f);
  enc.weights[feature * out_channels + channel] = 1.0f;
  return enc;
}

}  // namespace radarvel
