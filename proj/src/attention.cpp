#include "alnet/attention.hpp"

#include <algorithm>
#include <cmath>

ALNET_NS_BEGIN

LstmState LstmState::zeros(std::size_t hidden) {
  return {Tensor(Shape{1, hidden}, real{0}), Tensor(Shape{1, hidden}, real{0})};
}

LstmState LstmState::detached() const { return {cell.clone(), hidden.clone()}; }

AttentionParams AttentionParams::init(std::size_t input_dim, std::size_t classes,
                                      std::size_t hidden, std::uint64_t seed) {
  Rng rng(seed);
  AttentionParams p;
  const std::size_t width = hidden + input_dim;
  for (Tensor* w : {&p.lstm.w_input, &p.lstm.w_forget, &p.lstm.w_output, &p.lstm.w_cell})
    *w = glorot_uniform({hidden, width}, width, hidden, rng);
  for (Tensor* b : {&p.lstm.b_input, &p.lstm.b_forget, &p.lstm.b_output, &p.lstm.b_cell})
    *b = Tensor(Shape{hidden}, real{0});
  p.w_locate = glorot_uniform({4, 2 * hidden}, 2 * hidden, 4, rng);
  p.local_weight = glorot_uniform({classes, input_dim}, input_dim, classes, rng);
  p.local_bias = Tensor(Shape{classes}, real{0});
  return p;
}

AttentionParams AttentionParams::zeros(std::size_t input_dim, std::size_t classes,
                                       std::size_t hidden) {
  AttentionParams p;
  const std::size_t width = hidden + input_dim;
  for (Tensor* w : {&p.lstm.w_input, &p.lstm.w_forget, &p.lstm.w_output, &p.lstm.w_cell})
    *w = Tensor(Shape{hidden, width}, real{0});
  for (Tensor* b : {&p.lstm.b_input, &p.lstm.b_forget, &p.lstm.b_output, &p.lstm.b_cell})
    *b = Tensor(Shape{hidden}, real{0});
  p.w_locate = Tensor(Shape{4, 2 * hidden}, real{0});
  p.local_weight = Tensor(Shape{classes, input_dim}, real{0});
  p.local_bias = Tensor(Shape{classes}, real{0});
  return p;
}

ParamList AttentionParams::parameters() const {
  return {
      {"attention.lstm.input_gate.weight", lstm.w_input, ParamRole::Weight},
      {"attention.lstm.input_gate.bias", lstm.b_input, ParamRole::Bias},
      {"attention.lstm.forget_gate.weight", lstm.w_forget, ParamRole::Weight},
      {"attention.lstm.forget_gate.bias", lstm.b_forget, ParamRole::Bias},
      {"attention.lstm.output_gate.weight", lstm.w_output, ParamRole::Weight},
      {"attention.lstm.output_gate.bias", lstm.b_output, ParamRole::Bias},
      {"attention.lstm.candidate.weight", lstm.w_cell, ParamRole::Weight},
      {"attention.lstm.candidate.bias", lstm.b_cell, ParamRole::Bias},
      {"attention.locate.weight", w_locate, ParamRole::Weight},
      {"attention.local_head.weight", local_weight, ParamRole::Weight},
      {"attention.local_head.bias", local_bias, ParamRole::Bias},
  };
}

LstmStep lstm_step(Tape& tape, const Tensor& x_input, const LstmState& state,
                   const LstmParams& p) {
  const std::size_t hidden = p.hidden_dim();
  require(state.cell.numel() == hidden && state.hidden.numel() == hidden, ErrorKind::Config,
          "LSTM state width does not match the gate weights");
  require(x_input.numel() == p.input_dim(), ErrorKind::Config,
          "LSTM expects a " + std::to_string(p.input_dim()) + "-wide input, got " +
              std::to_string(x_input.numel()));
  const Tensor x = x_input.rank() == 2 ? x_input : reshape(tape, x_input, {1, x_input.numel()});
  const Tensor z = concat(tape, state.hidden, x);
  const Tensor in_gate = sigmoid(tape, linear(tape, z, p.w_input, p.b_input));
  const Tensor forget_gate = sigmoid(tape, linear(tape, z, p.w_forget, p.b_forget));
  const Tensor out_gate = sigmoid(tape, linear(tape, z, p.w_output, p.b_output));
  const Tensor candidate = alnet::tanh(tape, linear(tape, z, p.w_cell, p.b_cell));
  const Tensor c_next =
      add(tape, mul(tape, forget_gate, state.cell), mul(tape, in_gate, candidate));
  const Tensor h_next = mul(tape, out_gate, alnet::tanh(tape, c_next));
  return {{c_next, h_next}, concat(tape, c_next, h_next)};
}

Tensor locate(Tape& tape, const Tensor& s_next, const Tensor& w_locate) {
  return sigmoid(tape, linear(tape, s_next, w_locate, Tensor()));
}

AttentionBox to_box(const Tensor& box) {
  require(box.numel() == 4, ErrorKind::Input, "attention box must have 4 components");
  auto v = box.data();
  return {v[0], v[1], v[2], v[3]};
}

namespace {

struct Axis {
  double lo, hi;
  double dlo_dpos, dlo_dsize;  // derivatives of the low edge w.r.t. l_pos, l_size
  double dhi_dpos, dhi_dsize;
};

Axis axis_edges(double pos, double size, std::size_t extent) {
  const double e = double(extent);
  const double raw = size * e;
  const bool clamped = raw < 1.0;
  if (BranchTrace* trace = BranchTrace::active()) trace->fold(clamped);
  const double w = clamped ? 1.0 : raw;
  const double dw = clamped ? 0.0 : e;
  Axis a;
  a.lo = pos * (e - w);
  a.hi = a.lo + w;
  a.dlo_dpos = e - w;
  a.dlo_dsize = -pos * dw;
  a.dhi_dpos = e - w;
  a.dhi_dsize = a.dlo_dsize + dw;
  return a;
}

double sigmoid_d(double t) { return 1.0 / (1.0 + std::exp(-t)); }

std::size_t round_half_up(double v) {
  const double r = std::floor(v + 0.5);
  return r <= 0 ? 0 : std::size_t(r);
}

}  // namespace

BoxEdges box_to_edges(const AttentionBox& box, std::size_t height, std::size_t width) {
  require(height >= 1 && width >= 1, ErrorKind::Input, "feature map must be at least 1x1");
  const Axis x = axis_edges(box.l1, box.l3, width);
  const Axis y = axis_edges(box.l2, box.l4, height);
  return {x.lo, x.hi, y.lo, y.hi};
}

Region box_to_region(const AttentionBox& box, std::size_t height, std::size_t width) {
  const BoxEdges e = box_to_edges(box, height, width);
  auto span = [](double lo, double hi, std::size_t extent) {
    std::size_t a = std::min(round_half_up(lo), extent - 1);
    std::size_t b = std::clamp(round_half_up(hi), a + 1, extent);
    return std::pair{a, b - a};
  };
  const auto [c0, cols] = span(e.x0, e.x1, width);
  const auto [r0, rows] = span(e.y0, e.y1, height);
  return {r0, c0, rows, cols};
}

SoftCrop soft_crop_pool(Tape& tape, const Tensor& feature_map, const Tensor& box,
                        double sharpness) {
  require(sharpness > 0, ErrorKind::Config, "soft crop sharpness must be positive");
  const auto& s = feature_map.shape();
  require((s.size() == 3) || (s.size() == 4 && s[0] == 1), ErrorKind::Config,
          "soft crop expects one [C,H,W] map, got " + to_string(s));
  const std::size_t off = s.size() - 3;
  const std::size_t C = s[off], H = s[off + 1], W = s[off + 2];
  const AttentionBox b = to_box(box);
  const Axis ax = axis_edges(b.l1, b.l3, W);
  const Axis ay = axis_edges(b.l2, b.l4, H);
  const double tau = sharpness;

  // Membership is separable: m(i,j) = row_w[i] * col_w[j].
  std::vector<double> col_w(W), col_lo(W), col_hi(W), row_w(H), row_lo(H), row_hi(H);
  for (std::size_t j = 0; j < W; ++j) {
    const double u = double(j) + 0.5;
    col_lo[j] = sigmoid_d(tau * (u - ax.lo));
    col_hi[j] = sigmoid_d(tau * (ax.hi - u));
    col_w[j] = col_lo[j] * col_hi[j];
  }
  for (std::size_t i = 0; i < H; ++i) {
    const double v = double(i) + 0.5;
    row_lo[i] = sigmoid_d(tau * (v - ay.lo));
    row_hi[i] = sigmoid_d(tau * (ay.hi - v));
    row_w[i] = row_lo[i] * row_hi[i];
  }
  double col_sum = 0, row_sum = 0;
  for (double w : col_w) col_sum += w;
  for (double w : row_w) row_sum += w;
  double mass = col_sum * row_sum;
  SoftCrop out;
  out.mass_clamped = mass < kMinCropMass;
  if (out.mass_clamped) mass = kMinCropMass;

  out.features = Tensor(Shape{1, C});
  auto fv = feature_map.data();
  auto ov = out.features.data();
  std::vector<double> mean(C);
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0;
    for (std::size_t i = 0; i < H; ++i) {
      double row = 0;
      for (std::size_t j = 0; j < W; ++j) row += col_w[j] * fv[(c * H + i) * W + j];
      acc += row_w[i] * row;
    }
    mean[c] = acc / mass;
    ov[c] = static_cast<real>(mean[c]);
  }

  if (tape.wants({&feature_map, &box})) {
    Tensor features = out.features;
    const bool clamped = out.mass_clamped;
    tape.record(features, {feature_map, box},
                [=, map = feature_map, box = box, features = features]() mutable {
      auto g = features.grad();
      auto fv = map.data();
      if (map.requires_grad()) {
        auto gm = map.ensure_grad();
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j)
              gm[(c * H + i) * W + j] += static_cast<real>(g[c] * row_w[i] * col_w[j] / mass);
      }
      if (!box.requires_grad()) return;
      // dL/dm(i,j); with the mass clamped the denominator is a constant.
      std::vector<double> gcol(W, 0.0), grow(H, 0.0);
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double gm = 0;
          for (std::size_t c = 0; c < C; ++c) {
            const double centered = clamped ? fv[(c * H + i) * W + j]
                                            : fv[(c * H + i) * W + j] - mean[c];
            gm += g[c] * centered;
          }
          gm /= mass;
          gcol[j] += gm * row_w[i];
          grow[i] += gm * col_w[j];
        }
      double gx0 = 0, gx1 = 0, gy0 = 0, gy1 = 0;
      for (std::size_t j = 0; j < W; ++j) {
        gx0 += gcol[j] * col_w[j] * -tau * (1.0 - col_lo[j]);
        gx1 += gcol[j] * col_w[j] * tau * (1.0 - col_hi[j]);
      }
      for (std::size_t i = 0; i < H; ++i) {
        gy0 += grow[i] * row_w[i] * -tau * (1.0 - row_lo[i]);
        gy1 += grow[i] * row_w[i] * tau * (1.0 - row_hi[i]);
      }
      auto gb = box.ensure_grad();
      gb[0] += static_cast<real>(gx0 * ax.dlo_dpos + gx1 * ax.dhi_dpos);
      gb[1] += static_cast<real>(gy0 * ay.dlo_dpos + gy1 * ay.dhi_dpos);
      gb[2] += static_cast<real>(gx0 * ax.dlo_dsize + gx1 * ax.dhi_dsize);
      gb[3] += static_cast<real>(gy0 * ay.dlo_dsize + gy1 * ay.dhi_dsize);
    });
  }
  return out;
}

Tensor hard_crop_pool(const Tensor& feature_map, const Region& r) {
  const auto& s = feature_map.shape();
  require((s.size() == 3) || (s.size() == 4 && s[0] == 1), ErrorKind::Input,
          "hard crop expects one [C,H,W] map, got " + to_string(s));
  const std::size_t off = s.size() - 3;
  const std::size_t C = s[off], H = s[off + 1], W = s[off + 2];
  require(r.rows >= 1 && r.cols >= 1 && r.row0 + r.rows <= H && r.col0 + r.cols <= W,
          ErrorKind::Input, "crop region out of bounds");
  Tensor out(Shape{1, C});
  auto fv = feature_map.data();
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0;
    for (std::size_t i = r.row0; i < r.row0 + r.rows; ++i)
      for (std::size_t j = r.col0; j < r.col0 + r.cols; ++j) acc += fv[(c * H + i) * W + j];
    out.data()[c] = static_cast<real>(acc / double(r.rows * r.cols));
  }
  return out;
}

std::size_t AgeDistribution::argmax() const {
  require(!probs.empty(), ErrorKind::Input, "empty distribution");
  return std::size_t(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

AgeDistribution AgeDistribution::from_tensor(const Tensor& probs_row) {
  auto v = probs_row.data();
  return {std::vector<double>(v.begin(), v.end()), true};
}

std::vector<double> fuse_raw(const AgeDistribution& global, const AgeDistribution& local) {
  require(global.probs.size() == local.probs.size(), ErrorKind::Input,
          "global and local predictions differ in length");
  std::vector<double> raw(global.probs.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = global.probs[i] + kLocalWeight * local.probs[i];
  return raw;
}

AgeDistribution fuse_predictions(const AgeDistribution& global, const AgeDistribution& local) {
  std::vector<double> p = fuse_raw(global, local);
  for (double& v : p) v /= 1.0 + kLocalWeight;
  return {std::move(p), true};
}

Tensor fuse(Tape& tape, const Tensor& p_global, const Tensor& p_local) {
  const Tensor raw = add(tape, p_global, scale(tape, p_local, kLocalWeight));
  return scale(tape, raw, 1.0 / (1.0 + kLocalWeight));
}

AttentionOutput attention_forward(Tape& tape, const Tensor& feature_map, const LstmState& state,
                                  const AttentionParams& params, double sharpness) {
  AttentionOutput out;
  out.x_input = global_avg_pool(tape, feature_map);
  require(out.x_input.dim(0) == 1, ErrorKind::Config, "attention runs on one feature map");
  LstmStep step = lstm_step(tape, out.x_input, state, params.lstm);
  out.state = step.state;
  out.s_next = step.s_next;
  out.box = locate(tape, out.s_next, params.w_locate);
  SoftCrop crop = soft_crop_pool(tape, feature_map, out.box, sharpness);
  out.local_features = crop.features;
  out.mass_clamped = crop.mass_clamped;
  out.local_logits = linear(tape, crop.features, params.local_weight, params.local_bias);
  out.local_probs = softmax(tape, out.local_logits);
  return out;
}

ALNET_NS_END
