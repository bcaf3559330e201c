#include "alnet/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <sstream>

ALNET_NS_BEGIN

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Input: return "input error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::Usage: return "usage error";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::CheckpointMagic: return "checkpoint magic error";
    case ErrorKind::CheckpointVersion: return "checkpoint version error";
    case ErrorKind::CheckpointTruncated: return "checkpoint truncation error";
    case ErrorKind::CheckpointShape: return "checkpoint shape error";
    case ErrorKind::Numeric: return "numeric error";
  }
  return "error";
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, real fill) : impl_(std::make_shared<Impl>()) {
  impl_->data.assign(element_count(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<real> values) : impl_(std::make_shared<Impl>()) {
  require(element_count(shape) == values.size(), ErrorKind::Config,
          "tensor of shape " + to_string(shape) + " cannot hold " +
              std::to_string(values.size()) + " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

const Shape& Tensor::shape() const {
  require(defined(), ErrorKind::Usage, "undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  require(axis < s.size(), ErrorKind::Usage, "axis out of range");
  return s[axis];
}

std::size_t Tensor::numel() const { return defined() ? impl_->data.size() : 0; }

std::span<real> Tensor::data() {
  require(defined(), ErrorKind::Usage, "undefined tensor");
  return impl_->data;
}

std::span<const real> Tensor::data() const {
  require(defined(), ErrorKind::Usage, "undefined tensor");
  return impl_->data;
}

real Tensor::item() const {
  require(numel() == 1, ErrorKind::Usage, "item() on non-scalar tensor " + to_string(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  require(defined(), ErrorKind::Usage, "undefined tensor");
  impl_->requires_grad = on;
  if (on) ensure_grad();
  return *this;
}

std::span<real> Tensor::grad() {
  require(has_grad(), ErrorKind::Usage, "tensor has no gradient");
  return impl_->grad;
}

std::span<const real> Tensor::grad() const {
  require(has_grad(), ErrorKind::Usage, "tensor has no gradient");
  return impl_->grad;
}

std::span<real> Tensor::ensure_grad() const {
  require(defined(), ErrorKind::Usage, "undefined tensor");
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), real{0});
}

Tensor Tensor::clone() const {
  if (!defined()) return {};
  return Tensor(impl_->shape, impl_->data);
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (!defined() || !other.defined()) return defined() == other.defined();
  if (impl_->shape != other.impl_->shape) return false;
  return std::memcmp(impl_->data.data(), other.impl_->data.data(),
                     impl_->data.size() * sizeof(real)) == 0;
}

bool Tape::wants(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->requires_grad(); });
}

void Tape::record(Tensor output, std::vector<Tensor> inputs, std::function<void()> backward) {
  output.set_requires_grad(true);
  entries_.push_back({std::move(output), std::move(inputs), std::move(backward)});
}

bool Tape::produced(const Tensor& t) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.output.same_storage(t); });
}

void Tape::backward(const Tensor& loss) {
  require(loss.defined() && loss.numel() == 1, ErrorKind::Usage,
          "backward needs a scalar loss");
  require(loss.requires_grad(), ErrorKind::Usage,
          "loss does not depend on any tensor that requires grad");
  Tensor seed = loss;
  seed.ensure_grad()[0] += real{1};
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
}

ALNET_NS_END
