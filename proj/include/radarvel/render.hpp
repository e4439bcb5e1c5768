#pragma once

#include <filesystem>
#include <vector>

#include "radarvel/core.hpp"

namespace radarvel {

struct GridConfig {
  double x_min = -40.0, x_max = 40.0;
  double y_min = -40.0, y_max = 40.0;
  double cell = 0.5;
  int max_points_per_pillar = 16;

  int width() const;   // cells along x
  int height() const;  // cells along y
  void validate() const;
  /// Flat cell index (row = y, column = x), or -1 outside the grid.
  int cell_index(double x, double y) const;
  Vec2 cell_center(int row, int col) const;

  bool operator==(const GridConfig&) const = default;
};

/// Dense [channels x height x width] BEV map, row-major, y rows, x columns.
template <typename T>
struct BasicGridTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;
  GridConfig geometry;

  BasicGridTensor() = default;
  BasicGridTensor(int c, const GridConfig& g)
      : channels(c), height(g.height()), width(g.width()),
        data(static_cast<std::size_t>(c) * g.height() * g.width(), T(0)), geometry(g) {}

  T& at(int c, int row, int col) { return data[(static_cast<std::size_t>(c) * height + row) * width + col]; }
  T at(int c, int row, int col) const { return data[(static_cast<std::size_t>(c) * height + row) * width + col]; }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
};

using GridTensor = BasicGridTensor<float>;

inline constexpr int kPillarFeatures = 9;

/// Per-point linear map [in_features x out_channels] (row-major) plus bias.
template <typename T>
struct BasicPillarEncoderParams {
  int out_channels = 8;
  std::vector<T> weights;  // kPillarFeatures * out_channels
  std::vector<T> bias;     // out_channels
};

using PillarEncoderParams = BasicPillarEncoderParams<float>;

/// Feature vectors of the points kept per non-empty pillar.
struct PillarBuckets {
  GridConfig geometry;
  std::vector<int> cells;                     // flat cell index per pillar
  std::vector<std::vector<std::array<double, kPillarFeatures>>> features;
};

/// Buckets points by cell and builds the 9 features
/// (x, y, z, vr, rcs, dt, x - cx, y - cy, count / max_points). On overflow
/// the points nearest the pillar center are kept (ties broken by input order
/// of the sorted-by-value point, so the result is order independent).
PillarBuckets bucketize(std::span<const RadarPoint> points, const GridConfig& cfg);

/// Encodes buckets: per point ReLU(W^T f + b), max over the pillar.
/// `argmax`, when given, receives per output element the index of the
/// winning point within its pillar (-1 where the output is zero).
template <typename T>
void encode_pillars(const PillarBuckets& buckets, const BasicPillarEncoderParams<T>& enc,
                    T* out, std::vector<int>* argmax);

GridTensor pillarize(const Scan& scan, const GridConfig& cfg, const PillarEncoderParams& enc);

/// Per-scan pillar maps concatenated along channels, newest scan first.
GridTensor temporal_pillars(const Frame& frame, const GridConfig& cfg,
                            const PillarEncoderParams& enc);

/// Per cell the radial velocity of largest magnitude over all scans (sign
/// kept, positive wins exact ties); empty cells are zero.
GridTensor vr_map(const Frame& frame, const GridConfig& cfg);

/// Clips to +-50 m/s and scales to [-1, 1].
GridTensor vr_shortcut_input(const GridTensor& m);

/// Writes one channel as CSV (rows = y cells).
void write_channel_csv(const GridTensor& t, int channel, const std::filesystem::path& path);

PillarEncoderParams make_selector_encoder(int out_channels, int feature, int channel);

}  // namespace radarvel
