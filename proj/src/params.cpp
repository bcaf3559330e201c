#include "alnet/params.hpp"

#include <cmath>

ALNET_NS_BEGIN

double Rng::normal() {
  // Box-Muller; the second variate is discarded to keep the stream simple.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / double(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<real>(rng.uniform(-s, s));
  return t;
}

ParamList trainable(const ParamList& params) {
  ParamList out;
  for (const auto& p : params)
    if (p.role != ParamRole::Buffer) out.push_back(p);
  return out;
}

void set_requires_grad(const ParamList& params, bool on) {
  for (auto p : params)
    if (p.role != ParamRole::Buffer) p.tensor.set_requires_grad(on);
}

ALNET_NS_END
