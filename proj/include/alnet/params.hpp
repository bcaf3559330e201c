#pragma once

#include <string>
#include <vector>

#include "alnet/random.hpp"
#include "alnet/tensor.hpp"

ALNET_NS_BEGIN

/// Weights take weight decay; biases and normalization affine terms do not;
/// buffers (running statistics) are state, never trained.
enum class ParamRole { Weight, Bias, Norm, Buffer };

struct Param {
  std::string name;
  Tensor tensor;
  ParamRole role;
};

using ParamList = std::vector<Param>;

/// uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

ParamList trainable(const ParamList& params);
void set_requires_grad(const ParamList& params, bool on);

ALNET_NS_END
