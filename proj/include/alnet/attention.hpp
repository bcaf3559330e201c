#pragma once

#include <cstdint>
#include <vector>

#include "alnet/ops.hpp"
#include "alnet/params.hpp"

ALNET_NS_BEGIN

constexpr std::size_t kLstmHidden = 128;
constexpr double kDefaultSharpness = 25.0;
constexpr double kLocalWeight = 0.5;  // P_final = P_global + 0.5 P_local
constexpr double kMinCropMass = 1e-8;

/// Cell and hidden state, each [1, hidden].
struct LstmState {
  Tensor cell;
  Tensor hidden;

  static LstmState zeros(std::size_t hidden = kLstmHidden);
  /// Value copy cut off from any tape, for carrying across samples.
  LstmState detached() const;
  std::size_t hidden_dim() const { return cell.numel(); }
};

/// Gate weights act on the concatenation [h_prev, x_input].
struct LstmParams {
  Tensor w_input, w_forget, w_output, w_cell;  // [hidden, hidden + input]
  Tensor b_input, b_forget, b_output, b_cell;  // [hidden]

  std::size_t hidden_dim() const { return w_cell.dim(0); }
  std::size_t input_dim() const { return w_cell.dim(1) - w_cell.dim(0); }
};

/// LSTM, location network, and the local classifier.
struct AttentionParams {
  LstmParams lstm;
  Tensor w_locate;      // [4, 2*hidden], no bias
  Tensor local_weight;  // [classes, input]
  Tensor local_bias;    // [classes]

  static AttentionParams init(std::size_t input_dim, std::size_t classes, std::size_t hidden,
                              std::uint64_t seed);
  /// All-zero parameters of the given geometry.
  static AttentionParams zeros(std::size_t input_dim, std::size_t classes, std::size_t hidden);
  ParamList parameters() const;
};

struct LstmStep {
  LstmState state;
  Tensor s_next;  // [1, 2*hidden] = [C_next, h_next]
};

LstmStep lstm_step(Tape& tape, const Tensor& x_input, const LstmState& state,
                   const LstmParams& params);

/// Relative box on the feature map: x, y, width, height in [0,1].
struct AttentionBox {
  double l1 = 0.5, l2 = 0.5, l3 = 0.5, l4 = 0.5;
};

/// sigmoid(W · S_next) as a [1,4] tensor.
Tensor locate(Tape& tape, const Tensor& s_next, const Tensor& w_locate);
AttentionBox to_box(const Tensor& box);

/// Continuous box edges in cell units; cell (i,j) has center (j+0.5, i+0.5).
struct BoxEdges {
  double x0, x1, y0, y1;
};

/// Half-open integer rectangle [row0, row0+rows) × [col0, col0+cols).
struct Region {
  std::size_t row0 = 0, col0 = 0, rows = 1, cols = 1;
  bool operator==(const Region&) const = default;
};

/// w = max(1, l3·W), h = max(1, l4·H), x0 = l1·(W-w), y0 = l2·(H-h).
BoxEdges box_to_edges(const AttentionBox& box, std::size_t height, std::size_t width);
/// Edges rounded half-up, clamped to the map with at least one cell.
Region box_to_region(const AttentionBox& box, std::size_t height, std::size_t width);

struct SoftCrop {
  Tensor features;  // [1, C]
  bool mass_clamped = false;
};

/// Sigmoid-membership weighted mean of the map cells:
/// m = σ(τ(u-x0))·σ(τ(x1-u))·σ(τ(v-y0))·σ(τ(y1-v)), output Σ m·cell / Σ m.
/// Differentiable in the map and in the [1,4] box tensor.
SoftCrop soft_crop_pool(Tape& tape, const Tensor& feature_map, const Tensor& box,
                        double sharpness);

/// Exact mean over an integer region, [1, C].
Tensor hard_crop_pool(const Tensor& feature_map, const Region& region);

struct AgeDistribution {
  std::vector<double> probs;
  bool normalized = true;

  std::size_t argmax() const;
  static AgeDistribution from_tensor(const Tensor& probs_row);
};

/// P_global + 0.5 P_local, divided by 1.5 so the result is a distribution.
AgeDistribution fuse_predictions(const AgeDistribution& global, const AgeDistribution& local);
/// Unnormalized P_global + 0.5 P_local.
std::vector<double> fuse_raw(const AgeDistribution& global, const AgeDistribution& local);
/// Differentiable fusion of [1,K] probability rows (normalized).
Tensor fuse(Tape& tape, const Tensor& p_global, const Tensor& p_local);

struct AttentionOutput {
  Tensor x_input;       // [1, C]
  Tensor s_next;        // [1, 2*hidden]
  Tensor box;           // [1, 4]
  Tensor local_features;
  Tensor local_logits;  // [1, K]
  Tensor local_probs;   // [1, K]
  LstmState state;
  bool mass_clamped = false;
};

/// Pool the map, one LSTM step, locate, soft crop, local classifier.
AttentionOutput attention_forward(Tape& tape, const Tensor& feature_map, const LstmState& state,
                                  const AttentionParams& params, double sharpness);

ALNET_NS_END
