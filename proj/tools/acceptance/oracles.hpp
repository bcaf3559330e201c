#pragma once

#include <cstdint>

namespace acceptance {

/// Largest |difference| between a dimension-1 LSTM step and a scalar
/// evaluation of the gate equations over `draws` random draws.
double lstm_scalar_worst_gap(int draws, std::uint64_t seed);

}  // namespace acceptance
