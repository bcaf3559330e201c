#include "alnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "alnet/ops.hpp"

ALNET_NS_BEGIN

GradCheckReport grad_check(const LossFn& loss_fn, const ParamList& all_params,
                           const GradCheckOptions& options) {
  require(options.step > 0, ErrorKind::Usage, "gradient check step must be positive");
  const ParamList params = trainable(all_params);
  std::vector<std::size_t> offsets{0};
  for (const auto& p : params) offsets.push_back(offsets.back() + p.tensor.numel());
  const std::size_t total = offsets.back();

  // Partial Fisher-Yates drawn on demand: distinct entries, uniform over all
  // parameters.
  std::vector<std::size_t> pool(total);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  Rng rng(options.seed);
  std::size_t drawn = 0;
  const std::size_t max_draws = std::min(
      total, options.max_draws ? options.max_draws : 10 * std::max<std::size_t>(options.samples, 1));
  auto next_pick = [&](std::size_t& flat) {
    if (drawn >= max_draws) return false;
    std::swap(pool[drawn], pool[drawn + rng.below(total - drawn)]);
    flat = pool[drawn++];
    return true;
  };

  for (auto p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  std::uint64_t base_signature;
  {
    BranchTrace trace;
    Tape tape;
    Loss loss = loss_fn(tape);
    tape.backward(loss.tensor);
    base_signature = trace.signature();
  }

  GradCheckReport report;
  std::size_t flat = 0;
  while (report.checked + report.skipped < options.samples && next_pick(flat)) {
    const std::size_t which =
        std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1;
    Param p = params[which];
    const std::size_t idx = flat - offsets[which];
    auto values = p.tensor.data();
    const real original = values[idx];
    const double analytic = p.tensor.grad()[idx];

    const real up = static_cast<real>(original + options.step);
    const real down = static_cast<real>(original - options.step);
    values[idx] = up;
    bool kink = false;
    auto probe = [&]() {
      BranchTrace trace;
      Tape tape(false);
      const double value = loss_fn(tape).value;
      kink = kink || trace.signature() != base_signature;
      return value;
    };
    const double loss_up = probe();
    values[idx] = down;
    const double loss_down = probe();
    values[idx] = original;
    if (kink && options.skip_kinks) {
      ++report.kinks;
      continue;
    }
    const double numeric = (loss_up - loss_down) / (double(up) - double(down));

    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale == 0) {
      ++report.skipped;
      continue;
    }
    ++report.checked;
    const double rel = std::abs(analytic - numeric) / std::max(scale, options.abs_floor);
    report.max_rel_err = std::max(report.max_rel_err, rel);
    if (rel > options.tolerance) report.failures.push_back({p.name, idx, analytic, numeric, rel});
  }
  return report;
}

ALNET_NS_END
