#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "alnet/tensor.hpp"

ALNET_NS_BEGIN

// Differentiable primitives. Every op takes the tape it records on; spatial
// ops accept [C,H,W] (a batch of one) or [N,C,H,W] and keep the input rank.
// Reductions accumulate in double and round once when storing.

/// While alive, piecewise ops on this thread (ReLU, max pooling, the crop width
/// clamp) fold the branch each element takes into a running hash. Two forwards
/// with equal signatures stayed on the same smooth piece.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  std::uint64_t signature() const { return hash_; }
  /// The innermost live trace, or null.
  static BranchTrace* active();
  void fold(std::uint64_t branch) { hash_ = (hash_ ^ branch) * 0x100000001b3ull; }

 private:
  BranchTrace* previous_;
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

enum class Activation { Relu, Sigmoid, Tanh };

Tensor activation(Tape& tape, Activation kind, const Tensor& x);
inline Tensor relu(Tape& tape, const Tensor& x) { return activation(tape, Activation::Relu, x); }
inline Tensor sigmoid(Tape& tape, const Tensor& x) { return activation(tape, Activation::Sigmoid, x); }
inline Tensor tanh(Tape& tape, const Tensor& x) { return activation(tape, Activation::Tanh, x); }

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor sum(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

/// Concatenates two [N,a] and [N,b] tensors along the last axis.
Tensor concat(Tape& tape, const Tensor& a, const Tensor& b);

/// Row `index` of the leading axis, keeping a leading extent of one.
Tensor select(Tape& tape, const Tensor& x, std::size_t index);

/// Output extent of a window sweep; throws a configuration error when the
/// window does not fit.
std::size_t sweep_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad);

/// `bias` may be undefined (no bias term).
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t pad);

enum class BnMode { Train, Eval };

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  static BatchNormStats fresh(std::size_t channels);
};

constexpr double kBnEpsilon = 1e-5;
constexpr double kBnMomentum = 0.1;

/// Per-channel normalization over N,H,W. Train mode updates `stats` (unbiased
/// variance); eval mode reads them and mutates nothing.
Tensor batchnorm2d(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormStats& stats, BnMode mode);

Tensor max_pool2d(Tape& tape, const Tensor& x, std::size_t window, std::size_t stride,
                  std::size_t pad);

/// Non-overlapping mean pooling (stride = window).
Tensor avg_pool2d(Tape& tape, const Tensor& x, std::size_t window);

/// Mean over H,W: [N,C,H,W] -> [N,C], [C,H,W] -> [1,C].
Tensor global_avg_pool(Tape& tape, const Tensor& x);

/// x: [d_in] or [N,d_in]; weight: [d_out,d_in]; bias: [d_out] or undefined.
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Row-wise softmax of [N,K] (or [K]).
Tensor softmax(Tape& tape, const Tensor& logits);

struct CrossEntropy {
  Tensor probs;
  Loss loss;  // mean over rows
};

CrossEntropy softmax_cross_entropy(Tape& tape, const Tensor& logits,
                                   std::span<const std::size_t> labels);

/// Mean negative log-likelihood of already-normalized rows.
Loss negative_log_likelihood(Tape& tape, const Tensor& probs,
                             std::span<const std::size_t> labels);

ALNET_NS_END
