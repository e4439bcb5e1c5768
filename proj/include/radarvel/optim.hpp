#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "radarvel/model.hpp"

namespace radarvel {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<T> m, v;
  std::int64_t step = 0;
};

/// One Adam update in place. Entries with a zero `mask` value keep their
/// parameter and moments untouched.
template <typename T>
void optimizer_step(ModelParams<T>& params, const std::vector<T>& grads, AdamState<T>& state,
                    double lr, const AdamConfig& cfg = {}, const std::vector<char>* mask = nullptr);

struct Checkpoint {
  ModelConfig model;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::string phase;
  ModelParams<float> params;
  AdamState<float> adam;
};

/// "PVLCKPT1", u32 little-endian header length, JSON header, then the
/// parameter, Adam m and Adam v arrays as little-endian float32.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace radarvel
