#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "alnet/params.hpp"

ALNET_NS_BEGIN

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-2;
  std::size_t samples = 100;  // sampled parameter entries; all when fewer exist
  std::uint64_t seed = 0;
  // Lower bound on the error denominator, so gradients near the rounding
  // noise of the loss are held to an absolute tolerance instead.
  double abs_floor = 1e-8;
  // Entries whose probes land on a different piece of a piecewise op (a ReLU
  // changing sign, another max-pool winner) have no meaningful central
  // difference. They are counted in `kinks` and replaced by fresh draws, up to
  // `max_draws` draws in total (0: ten times `samples`).
  bool skip_kinks = true;
  std::size_t max_draws = 0;
};

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::size_t kinks = 0;
  std::vector<GradCheckEntry> failures;
  bool passed() const { return failures.empty(); }
};

/// Must rebuild the whole forward on the given tape and return the loss; it is
/// called once with a recording tape and twice per sampled entry without.
using LossFn = std::function<Loss(Tape&)>;

/// Compares analytic gradients against (L(θ+h) - L(θ-h)) / 2h on sampled
/// entries of `params`. Entries where both are exactly zero are skipped. The
/// divisor is the step actually realized after the perturbed value is rounded
/// to `real`.
GradCheckReport grad_check(const LossFn& loss_fn, const ParamList& params,
                           const GradCheckOptions& options);

ALNET_NS_END
