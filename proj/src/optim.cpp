#include "radarvel/optim.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace radarvel {

template <typename T>
void optimizer_step(ModelParams<T>& params, const std::vector<T>& grads, AdamState<T>& state,
                    double lr, const AdamConfig& cfg, const std::vector<char>* mask) {
  const std::size_t n = params.values.size();
  if (grads.size() != n) throw ShapeMismatch("gradient size does not match parameters");
  if (mask && mask->size() != n) throw ShapeMismatch("update mask size does not match parameters");
  if (state.m.size() != n) {
    state.m.assign(n, T(0));
    state.v.assign(n, T(0));
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < n; ++i) {
    if (mask && !(*mask)[i]) continue;
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    params.values[i] -= step_size * state.m[i] / (std::sqrt(state.v[i]) * inv_sqrt_bc2 + eps);
  }
}

template void optimizer_step<float>(ModelParams<float>&, const std::vector<float>&, AdamState<float>&,
                                    double, const AdamConfig&, const std::vector<char>*);
template void optimizer_step<double>(ModelParams<double>&, const std::vector<double>&,
                                     AdamState<double>&, double, const AdamConfig&,
                                     const std::vector<char>*);

namespace {

constexpr char kMagic[8] = {'P', 'V', 'L', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_floats(std::ostream& out, const std::vector<float>& v) {
  for (float f : v) write_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::vector<float> read_floats(std::istream& in, std::size_t n) {
  std::vector<float> v(n);
  for (auto& f : v) f = std::bit_cast<float>(read_u32(in));
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const std::size_t n = c.params.values.size();
  const bool has_adam = c.adam.m.size() == n && n > 0;
  nlohmann::json header = {{"model", c.model},
                           {"seed", c.seed},
                           {"epoch", c.epoch},
                           {"phase", c.phase},
                           {"param_count", n},
                           {"optimizer", {{"type", "adam"}, {"step", c.adam.step}, {"arrays", has_adam ? 2 : 0}}}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 8);
  write_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_floats(out, c.params.values);
  if (has_adam) {
    write_floats(out, c.adam.m);
    write_floats(out, c.adam.v);
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a checkpoint: " + path.string());
  const std::uint32_t len = read_u32(in);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw IoError("truncated checkpoint header");
  Checkpoint c;
  try {
    const auto h = nlohmann::json::parse(text);
    c.model = h.at("model").get<ModelConfig>();
    c.seed = h.at("seed").get<std::uint64_t>();
    c.epoch = h.at("epoch").get<int>();
    c.phase = h.value("phase", "");
    const auto n = h.at("param_count").get<std::size_t>();
    const auto& opt = h.at("optimizer");
    c.adam.step = opt.value("step", std::int64_t{0});
    c.params.values = read_floats(in, n);
    if (opt.value("arrays", 0) == 2) {
      c.adam.m = read_floats(in, n);
      c.adam.v = read_floats(in, n);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(std::string("malformed checkpoint header: ") + ex.what());
  }
  if (!in) throw IoError("truncated checkpoint arrays");
  return c;
}

}  // namespace radarvel
