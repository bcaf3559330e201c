// Built against the 64-bit core: the scalar oracle is held to 1e-12.
#include <algorithm>
#include <cmath>

#include "alnet/attention.hpp"
#include "oracles.hpp"

namespace acceptance {

double lstm_scalar_worst_gap(int draws, std::uint64_t seed) {
  using namespace alnet;
  auto sigmoid = [](double v) { return 1 / (1 + std::exp(-v)); };
  Rng rng(seed);
  double worst = 0;
  for (int draw = 0; draw < draws; ++draw) {
    AttentionParams p = AttentionParams::zeros(1, 2, 1);
    double w[4][2], b[4];
    Tensor* ws[4] = {&p.lstm.w_input, &p.lstm.w_forget, &p.lstm.w_output, &p.lstm.w_cell};
    Tensor* bs[4] = {&p.lstm.b_input, &p.lstm.b_forget, &p.lstm.b_output, &p.lstm.b_cell};
    for (int g = 0; g < 4; ++g) {
      for (int j = 0; j < 2; ++j) ws[g]->data()[j] = w[g][j] = rng.uniform(-3, 3);
      bs[g]->data()[0] = b[g] = rng.uniform(-1, 1);
    }
    const double h = rng.uniform(-1, 1), c = rng.uniform(-2, 2), x = rng.uniform(-2, 2);

    // [h, x] concatenated, one weight row per gate.
    const double in = sigmoid(w[0][0] * h + w[0][1] * x + b[0]);
    const double forget = sigmoid(w[1][0] * h + w[1][1] * x + b[1]);
    const double out = sigmoid(w[2][0] * h + w[2][1] * x + b[2]);
    const double cand = std::tanh(w[3][0] * h + w[3][1] * x + b[3]);
    const double c_next = forget * c + in * cand;
    const double h_next = out * std::tanh(c_next);

    Tape tape(false);
    const LstmState state{Tensor(Shape{1, 1}, c), Tensor(Shape{1, 1}, h)};
    const LstmStep step = lstm_step(tape, Tensor(Shape{1, 1}, x), state, p.lstm);
    worst = std::max(worst, std::abs(step.s_next.data()[0] - c_next));
    worst = std::max(worst, std::abs(step.s_next.data()[1] - h_next));
  }
  return worst;
}

}  // namespace acceptance
