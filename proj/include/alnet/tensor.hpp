#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "alnet/error.hpp"
#include "alnet/real.hpp"

ALNET_NS_BEGIN

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major n-dimensional array with an optional gradient buffer.
///
/// A Tensor is a shared handle: copies alias the same storage, so a parameter
/// held by a model and referenced from a tape entry is one object. Use
/// clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = 0);
  Tensor(Shape shape, std::vector<real> values);

  static Tensor scalar(real value) { return Tensor(Shape{1}, value); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<real> data();
  std::span<const real> data() const;
  real item() const;

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  /// Turning requires_grad on allocates a zeroed gradient buffer.
  Tensor& set_requires_grad(bool on);

  bool has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }
  std::span<real> grad();
  std::span<const real> grad() const;
  /// Returns the gradient buffer, allocating zeros on first use. Gradient
  /// buffers are accumulators, so this is available through const handles.
  std::span<real> ensure_grad() const;
  void zero_grad();

  /// Deep copy of values; the copy does not require grad.
  Tensor clone() const;
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }
  bool bitwise_equal(const Tensor& other) const;

 private:
  struct Impl {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Define-by-run record of differentiable operations.
///
/// Operations append an entry only when recording is on and at least one input
/// requires grad; the entry's output then requires grad as well. A tape built
/// with recording off is the inference path.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// True when the op should be recorded for these inputs.
  bool wants(std::initializer_list<const Tensor*> inputs) const;

  /// Appends an entry. `backward` reads output.grad() and accumulates into the
  /// gradients of inputs that require grad.
  void record(Tensor output, std::vector<Tensor> inputs, std::function<void()> backward);

  bool produced(const Tensor& t) const;

  /// Reverse pass from a scalar loss. Every entry is visited once, newest first.
  void backward(const Tensor& loss);

 private:
  struct Entry {
    Tensor output;
    std::vector<Tensor> inputs;
    std::function<void()> backward;
  };
  bool recording_;
  std::vector<Entry> entries_;
};

inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

/// Scalar loss tensor plus its value before rounding to `real`.
struct Loss {
  Tensor tensor;
  double value = 0.0;
};

ALNET_NS_END
