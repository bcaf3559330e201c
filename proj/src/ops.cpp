#include "alnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

ALNET_NS_BEGIN

namespace {

struct Dims4 {
  std::size_t n, c, h, w;
};

Dims4 spatial_dims(const Tensor& x, const char* op) {
  const auto& s = x.shape();
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  fail(ErrorKind::Config, std::string(op) + " expects [C,H,W] or [N,C,H,W], got " + to_string(s));
}

Shape spatial_shape(const Tensor& like, std::size_t n, std::size_t c, std::size_t h,
                    std::size_t w) {
  if (like.rank() == 3) return {c, h, w};
  return {n, c, h, w};
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::Config,
          std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
              to_string(b.shape()));
}

struct Rows {
  std::size_t n, k;
};

Rows row_dims(const Tensor& x, const char* op) {
  const auto& s = x.shape();
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  fail(ErrorKind::Config, std::string(op) + " expects [K] or [N,K], got " + to_string(s));
}

}  // namespace

namespace {
thread_local BranchTrace* current_trace = nullptr;
}  // namespace

BranchTrace::BranchTrace() : previous_(current_trace) { current_trace = this; }
BranchTrace::~BranchTrace() { current_trace = previous_; }
BranchTrace* BranchTrace::active() { return current_trace; }

Tensor activation(Tape& tape, Activation kind, const Tensor& x) {
  Tensor out(x.shape());
  auto in = x.data();
  auto o = out.data();
  switch (kind) {
    case Activation::Relu:
      for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0 ? in[i] : real{0};
      if (BranchTrace* trace = BranchTrace::active()) {
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < in.size(); ++i) {
          bits = (bits << 1) | (in[i] > 0 ? 1u : 0u);
          if (i % 64 == 63 || i + 1 == in.size()) {
            trace->fold(bits);
            bits = 0;
          }
        }
      }
      break;
    case Activation::Sigmoid: {
      // Kept strictly inside (0,1) where the storage type would round to an end.
      const real lo = std::numeric_limits<real>::denorm_min();
      const real hi = std::nextafter(real{1}, real{0});
      for (std::size_t i = 0; i < in.size(); ++i)
        o[i] = std::clamp(static_cast<real>(1.0 / (1.0 + std::exp(-static_cast<double>(in[i])))),
                          lo, hi);
      break;
    }
    case Activation::Tanh:
      for (std::size_t i = 0; i < in.size(); ++i)
        o[i] = static_cast<real>(std::tanh(static_cast<double>(in[i])));
      break;
  }
  if (tape.wants({&x})) {
    tape.record(out, {x}, [x, out, kind]() mutable {
      auto gx = x.ensure_grad();
      auto go = out.grad();
      auto xv = x.data();
      auto ov = out.data();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        double d = 0;
        switch (kind) {
          case Activation::Relu: d = xv[i] > 0 ? 1.0 : 0.0; break;
          case Activation::Sigmoid: d = double(ov[i]) * (1.0 - double(ov[i])); break;
          case Activation::Tanh: d = 1.0 - double(ov[i]) * double(ov[i]); break;
        }
        gx[i] += static_cast<real>(go[i] * d);
      }
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  same_shape(a, b, "add");
  Tensor out(a.shape());
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  if (tape.wants({&a, &b})) {
    tape.record(out, {a, b}, [a, b, out]() mutable {
      auto go = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = t->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  if (tape.wants({&a, &b})) {
    tape.record(out, {a, b}, [a, b, out]() mutable {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto g = a.ensure_grad();
        auto bv = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto g = b.ensure_grad();
        auto av = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  Tensor out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<real>(xv[i] * factor);
  if (tape.wants({&x})) {
    tape.record(out, {x}, [x, out, factor]() mutable {
      auto g = x.ensure_grad();
      auto go = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<real>(go[i] * factor);
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double acc = 0;
  for (real v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<real>(acc));
  if (tape.wants({&x})) {
    tape.record(out, {x}, [x, out]() mutable {
      auto g = x.ensure_grad();
      const real go = out.grad()[0];
      for (auto& v : g) v += go;
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  require(element_count(shape) == x.numel(), ErrorKind::Config,
          "reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  Tensor out(std::move(shape), std::vector<real>(x.data().begin(), x.data().end()));
  if (tape.wants({&x})) {
    tape.record(out, {x}, [x, out]() mutable {
      auto g = x.ensure_grad();
      auto go = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
    });
  }
  return out;
}

Tensor concat(Tape& tape, const Tensor& a, const Tensor& b) {
  const Rows ra = row_dims(a, "concat");
  const Rows rb = row_dims(b, "concat");
  require(ra.n == rb.n, ErrorKind::Config, "concat: row count mismatch");
  const std::size_t k = ra.k + rb.k;
  Tensor out(Shape{ra.n, k});
  auto o = out.data();
  for (std::size_t r = 0; r < ra.n; ++r) {
    std::copy_n(a.data().begin() + r * ra.k, ra.k, o.begin() + r * k);
    std::copy_n(b.data().begin() + r * rb.k, rb.k, o.begin() + r * k + ra.k);
  }
  if (tape.wants({&a, &b})) {
    tape.record(out, {a, b}, [a, b, out, ra, rb, k]() mutable {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto g = a.ensure_grad();
        for (std::size_t r = 0; r < ra.n; ++r)
          for (std::size_t i = 0; i < ra.k; ++i) g[r * ra.k + i] += go[r * k + i];
      }
      if (b.requires_grad()) {
        auto g = b.ensure_grad();
        for (std::size_t r = 0; r < rb.n; ++r)
          for (std::size_t i = 0; i < rb.k; ++i) g[r * rb.k + i] += go[r * k + ra.k + i];
      }
    });
  }
  return out;
}

Tensor select(Tape& tape, const Tensor& x, std::size_t index) {
  require(x.rank() >= 1 && index < x.dim(0), ErrorKind::Input, "select index out of range");
  Shape shape = x.shape();
  const std::size_t stride = x.numel() / shape[0];
  shape[0] = 1;
  auto begin = x.data().begin() + index * stride;
  Tensor out(shape, std::vector<real>(begin, begin + stride));
  if (tape.wants({&x})) {
    tape.record(out, {x}, [x, out, index, stride]() mutable {
      auto g = x.ensure_grad();
      auto go = out.grad();
      for (std::size_t i = 0; i < stride; ++i) g[index * stride + i] += go[i];
    });
  }
  return out;
}

std::size_t sweep_extent(std::size_t in, std::size_t window, std::size_t stride,
                         std::size_t pad) {
  require(stride >= 1, ErrorKind::Config, "stride must be >= 1");
  require(window >= 1 && window <= in + 2 * pad, ErrorKind::Config,
          "window " + std::to_string(window) + " exceeds padded extent " +
              std::to_string(in + 2 * pad));
  return (in + 2 * pad - window) / stride + 1;
}

namespace {

struct ConvGeom {
  std::size_t c, h, w, k, stride, pad, ho, wo;
  std::size_t patch() const { return c * k * k; }
  std::size_t positions() const { return ho * wo; }
};

// Column layout [patch][position] for the forward product.
void im2col(const real* img, const ConvGeom& g, real* col) {
  const std::size_t p = g.positions();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        real* row = col + ((c * g.k + ki) * g.k + kj) * p;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long ih = long(oh * g.stride + ki) - long(g.pad);
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const long iw = long(ow * g.stride + kj) - long(g.pad);
            const bool inside = ih >= 0 && ih < long(g.h) && iw >= 0 && iw < long(g.w);
            row[oh * g.wo + ow] = inside ? img[(c * g.h + ih) * g.w + iw] : real{0};
          }
        }
      }
    }
  }
}

// Row layout [position][patch] for the backward products.
void im2row(const real* img, const ConvGeom& g, real* rows) {
  const std::size_t kp = g.patch();
  for (std::size_t oh = 0; oh < g.ho; ++oh) {
    for (std::size_t ow = 0; ow < g.wo; ++ow) {
      real* r = rows + (oh * g.wo + ow) * kp;
      for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ki = 0; ki < g.k; ++ki) {
          const long ih = long(oh * g.stride + ki) - long(g.pad);
          for (std::size_t kj = 0; kj < g.k; ++kj) {
            const long iw = long(ow * g.stride + kj) - long(g.pad);
            const bool inside = ih >= 0 && ih < long(g.h) && iw >= 0 && iw < long(g.w);
            *r++ = inside ? img[(c * g.h + ih) * g.w + iw] : real{0};
          }
        }
      }
    }
  }
}

void row2im_add(const double* rows, const ConvGeom& g, real* img) {
  const std::size_t kp = g.patch();
  for (std::size_t oh = 0; oh < g.ho; ++oh) {
    for (std::size_t ow = 0; ow < g.wo; ++ow) {
      const double* r = rows + (oh * g.wo + ow) * kp;
      for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ki = 0; ki < g.k; ++ki) {
          const long ih = long(oh * g.stride + ki) - long(g.pad);
          for (std::size_t kj = 0; kj < g.k; ++kj, ++r) {
            const long iw = long(ow * g.stride + kj) - long(g.pad);
            if (ih >= 0 && ih < long(g.h) && iw >= 0 && iw < long(g.w))
              img[(c * g.h + ih) * g.w + iw] += static_cast<real>(*r);
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t pad) {
  const Dims4 d = spatial_dims(x, "conv2d");
  require(weight.rank() == 4, ErrorKind::Config, "conv2d weight must be [C_out,C_in,k,k]");
  const std::size_t out_c = weight.dim(0);
  require(weight.dim(1) == d.c, ErrorKind::Config,
          "conv2d: input has " + std::to_string(d.c) + " channels, weight expects " +
              std::to_string(weight.dim(1)));
  require(weight.dim(2) == weight.dim(3), ErrorKind::Config, "conv2d kernel must be square");
  if (bias.defined())
    require(bias.numel() == out_c, ErrorKind::Config, "conv2d bias length mismatch");
  ConvGeom g{d.c, d.h, d.w, weight.dim(2), stride, pad, 0, 0};
  g.ho = sweep_extent(d.h, g.k, stride, pad);
  g.wo = sweep_extent(d.w, g.k, stride, pad);

  const std::size_t kp = g.patch();
  const std::size_t np = g.positions();
  Tensor out(spatial_shape(x, d.n, out_c, g.ho, g.wo));
  std::vector<real> col(kp * np);
  std::vector<double> acc(np);
  auto wv = weight.data();
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(xv.data() + n * d.c * d.h * d.w, g, col.data());
    for (std::size_t o = 0; o < out_c; ++o) {
      std::fill(acc.begin(), acc.end(), bias.defined() ? double(bias.data()[o]) : 0.0);
      for (std::size_t q = 0; q < kp; ++q) {
        const double wq = wv[o * kp + q];
        const real* row = col.data() + q * np;
        for (std::size_t p = 0; p < np; ++p) acc[p] += wq * row[p];
      }
      real* dst = ov.data() + (n * out_c + o) * np;
      for (std::size_t p = 0; p < np; ++p) dst[p] = static_cast<real>(acc[p]);
    }
  }

  if (tape.wants({&x, &weight, &bias})) {
    tape.record(out, {x, weight, bias}, [x, weight, bias, out, g, d, out_c]() mutable {
      const std::size_t kp = g.patch();
      const std::size_t np = g.positions();
      auto go = out.grad();
      auto wv = weight.data();
      auto xv = x.data();
      std::vector<real> rows(np * kp);
      std::vector<double> dw(weight.requires_grad() ? out_c * kp : 0);
      std::vector<double> drows(x.requires_grad() ? np * kp : 0);
      for (std::size_t n = 0; n < d.n; ++n) {
        const real* gon = go.data() + n * out_c * np;
        if (weight.requires_grad()) {
          im2row(xv.data() + n * d.c * d.h * d.w, g, rows.data());
          for (std::size_t o = 0; o < out_c; ++o) {
            double* dwo = dw.data() + o * kp;
            for (std::size_t p = 0; p < np; ++p) {
              const double gp = gon[o * np + p];
              if (gp == 0) continue;
              const real* r = rows.data() + p * kp;
              for (std::size_t q = 0; q < kp; ++q) dwo[q] += gp * r[q];
            }
          }
        }
        if (x.requires_grad()) {
          std::fill(drows.begin(), drows.end(), 0.0);
          for (std::size_t p = 0; p < np; ++p) {
            double* dr = drows.data() + p * kp;
            for (std::size_t o = 0; o < out_c; ++o) {
              const double gp = gon[o * np + p];
              if (gp == 0) continue;
              const real* wo = wv.data() + o * kp;
              for (std::size_t q = 0; q < kp; ++q) dr[q] += gp * wo[q];
            }
          }
          row2im_add(drows.data(), g, x.ensure_grad().data() + n * d.c * d.h * d.w);
        }
      }
      if (weight.requires_grad()) {
        auto gw = weight.ensure_grad();
        for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += static_cast<real>(dw[i]);
      }
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.ensure_grad();
        for (std::size_t o = 0; o < out_c; ++o) {
          double s = 0;
          for (std::size_t n = 0; n < d.n; ++n)
            for (std::size_t p = 0; p < np; ++p) s += go[(n * out_c + o) * np + p];
          gb[o] += static_cast<real>(s);
        }
      }
    });
  }
  return out;
}

BatchNormStats BatchNormStats::fresh(std::size_t channels) {
  return {Tensor(Shape{channels}, real{0}), Tensor(Shape{channels}, real{1})};
}

Tensor batchnorm2d(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormStats& stats, BnMode mode) {
  const Dims4 d = spatial_dims(x, "batchnorm2d");
  require(gamma.numel() == d.c && beta.numel() == d.c && stats.running_mean.numel() == d.c &&
              stats.running_var.numel() == d.c,
          ErrorKind::Config, "batchnorm2d: parameter length does not match channel count");
  const std::size_t hw = d.h * d.w;
  const std::size_t m = d.n * hw;
  auto xv = x.data();
  Tensor out(x.shape());
  auto ov = out.data();
  std::vector<double> mean(d.c), invstd(d.c);

  if (mode == BnMode::Train) {
    require(m >= 2, ErrorKind::Input,
            "batchnorm2d: degenerate batch, train mode needs N*H*W >= 2");
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    for (std::size_t c = 0; c < d.c; ++c) {
      double s = 0;
      for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t i = 0; i < hw; ++i) s += xv[(n * d.c + c) * hw + i];
      const double mu = s / double(m);
      double ss = 0;
      for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t i = 0; i < hw; ++i) {
          const double dv = xv[(n * d.c + c) * hw + i] - mu;
          ss += dv * dv;
        }
      const double var = ss / double(m);
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(var + kBnEpsilon);
      rm[c] = static_cast<real>((1 - kBnMomentum) * rm[c] + kBnMomentum * mu);
      rv[c] = static_cast<real>((1 - kBnMomentum) * rv[c] +
                                kBnMomentum * ss / double(m - 1));
    }
  } else {
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    for (std::size_t c = 0; c < d.c; ++c) {
      mean[c] = rm[c];
      invstd[c] = 1.0 / std::sqrt(double(rv[c]) + kBnEpsilon);
    }
  }
  auto gv = gamma.data();
  auto bv = beta.data();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      const double a = gv[c] * invstd[c];
      const double b = bv[c] - a * mean[c];
      const real* src = xv.data() + (n * d.c + c) * hw;
      real* dst = ov.data() + (n * d.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] = static_cast<real>(a * src[i] + b);
    }

  if (tape.wants({&x, &gamma, &beta})) {
    tape.record(out, {x, gamma, beta}, [x, gamma, beta, out, d, mode, mean, invstd]() mutable {
      const std::size_t hw = d.h * d.w;
      const double m = double(d.n * hw);
      auto go = out.grad();
      auto xv = x.data();
      auto gv = gamma.data();
      for (std::size_t c = 0; c < d.c; ++c) {
        double sum_g = 0, sum_gx = 0;
        for (std::size_t n = 0; n < d.n; ++n)
          for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t idx = (n * d.c + c) * hw + i;
            const double xhat = (xv[idx] - mean[c]) * invstd[c];
            sum_g += go[idx];
            sum_gx += go[idx] * xhat;
          }
        if (gamma.requires_grad()) gamma.ensure_grad()[c] += static_cast<real>(sum_gx);
        if (beta.requires_grad()) beta.ensure_grad()[c] += static_cast<real>(sum_g);
        if (!x.requires_grad()) continue;
        auto gx = x.ensure_grad();
        const double a = gv[c] * invstd[c];
        for (std::size_t n = 0; n < d.n; ++n)
          for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t idx = (n * d.c + c) * hw + i;
            if (mode == BnMode::Eval) {
              gx[idx] += static_cast<real>(a * go[idx]);
            } else {
              const double xhat = (xv[idx] - mean[c]) * invstd[c];
              gx[idx] += static_cast<real>(a * (go[idx] - sum_g / m - xhat * sum_gx / m));
            }
          }
      }
    });
  }
  return out;
}

Tensor max_pool2d(Tape& tape, const Tensor& x, std::size_t window, std::size_t stride,
                  std::size_t pad) {
  const Dims4 d = spatial_dims(x, "max_pool2d");
  const std::size_t ho = sweep_extent(d.h, window, stride, pad);
  const std::size_t wo = sweep_extent(d.w, window, stride, pad);
  Tensor out(spatial_shape(x, d.n, d.c, ho, wo));
  std::vector<std::size_t> argmax(out.numel());
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow) {
        real best = -std::numeric_limits<real>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t ki = 0; ki < window; ++ki) {
          const long ih = long(oh * stride + ki) - long(pad);
          if (ih < 0 || ih >= long(d.h)) continue;
          for (std::size_t kj = 0; kj < window; ++kj) {
            const long iw = long(ow * stride + kj) - long(pad);
            if (iw < 0 || iw >= long(d.w)) continue;
            const std::size_t idx = (nc * d.h + ih) * d.w + iw;
            if (xv[idx] > best) {
              best = xv[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (nc * ho + oh) * wo + ow;
        ov[o] = best;
        argmax[o] = best_idx;
      }
  }
  if (BranchTrace* trace = BranchTrace::active())
    for (std::size_t a : argmax) trace->fold(a);
  if (tape.wants({&x})) {
    tape.record(out, {x}, [x, out, argmax]() mutable {
      auto gx = x.ensure_grad();
      auto go = out.grad();
      for (std::size_t o = 0; o < go.size(); ++o) gx[argmax[o]] += go[o];
    });
  }
  return out;
}

Tensor avg_pool2d(Tape& tape, const Tensor& x, std::size_t window) {
  const Dims4 d = spatial_dims(x, "avg_pool2d");
  require(window >= 1 && window <= d.h && window <= d.w, ErrorKind::Config,
          "avg_pool2d: window " + std::to_string(window) + " larger than input " +
              std::to_string(d.h) + "x" + std::to_string(d.w));
  const std::size_t ho = d.h / window;
  const std::size_t wo = d.w / window;
  const double inv = 1.0 / double(window * window);
  Tensor out(spatial_shape(x, d.n, d.c, ho, wo));
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc)
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow) {
        double s = 0;
        for (std::size_t ki = 0; ki < window; ++ki)
          for (std::size_t kj = 0; kj < window; ++kj)
            s += xv[(nc * d.h + oh * window + ki) * d.w + ow * window + kj];
        ov[(nc * ho + oh) * wo + ow] = static_cast<real>(s * inv);
      }
  if (tape.wants({&x})) {
    tape.record(out, {x}, [x, out, d, window, ho, wo, inv]() mutable {
      auto gx = x.ensure_grad();
      auto go = out.grad();
      for (std::size_t nc = 0; nc < d.n * d.c; ++nc)
        for (std::size_t oh = 0; oh < ho; ++oh)
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const real g = static_cast<real>(go[(nc * ho + oh) * wo + ow] * inv);
            for (std::size_t ki = 0; ki < window; ++ki)
              for (std::size_t kj = 0; kj < window; ++kj)
                gx[(nc * d.h + oh * window + ki) * d.w + ow * window + kj] += g;
          }
    });
  }
  return out;
}

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
  const Dims4 d = spatial_dims(x, "global_avg_pool");
  const std::size_t hw = d.h * d.w;
  Tensor out(Shape{d.n, d.c});
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    double s = 0;
    for (std::size_t i = 0; i < hw; ++i) s += xv[nc * hw + i];
    ov[nc] = static_cast<real>(s / double(hw));
  }
  if (tape.wants({&x})) {
    tape.record(out, {x}, [x, out, d, hw]() mutable {
      auto gx = x.ensure_grad();
      auto go = out.grad();
      for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
        const real g = static_cast<real>(go[nc] / double(hw));
        for (std::size_t i = 0; i < hw; ++i) gx[nc * hw + i] += g;
      }
    });
  }
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Rows r = row_dims(x, "linear");
  require(weight.rank() == 2 && weight.dim(1) == r.k, ErrorKind::Config,
          "linear: input width " + std::to_string(r.k) + " vs weight " +
              to_string(weight.shape()));
  const std::size_t out_d = weight.dim(0);
  if (bias.defined())
    require(bias.numel() == out_d, ErrorKind::Config, "linear: bias length mismatch");
  Tensor out(x.rank() == 1 ? Shape{out_d} : Shape{r.n, out_d});
  auto xv = x.data();
  auto wv = weight.data();
  auto ov = out.data();
  for (std::size_t n = 0; n < r.n; ++n)
    for (std::size_t o = 0; o < out_d; ++o) {
      double s = bias.defined() ? double(bias.data()[o]) : 0.0;
      const real* w = wv.data() + o * r.k;
      const real* xi = xv.data() + n * r.k;
      for (std::size_t i = 0; i < r.k; ++i) s += double(w[i]) * xi[i];
      ov[n * out_d + o] = static_cast<real>(s);
    }
  if (tape.wants({&x, &weight, &bias})) {
    tape.record(out, {x, weight, bias}, [x, weight, bias, out, r, out_d]() mutable {
      auto go = out.grad();
      auto xv = x.data();
      auto wv = weight.data();
      if (x.requires_grad()) {
        auto gx = x.ensure_grad();
        std::vector<double> acc(r.k);
        for (std::size_t n = 0; n < r.n; ++n) {
          std::fill(acc.begin(), acc.end(), 0.0);
          for (std::size_t o = 0; o < out_d; ++o) {
            const double g = go[n * out_d + o];
            const real* w = wv.data() + o * r.k;
            for (std::size_t i = 0; i < r.k; ++i) acc[i] += g * w[i];
          }
          for (std::size_t i = 0; i < r.k; ++i) gx[n * r.k + i] += static_cast<real>(acc[i]);
        }
      }
      if (weight.requires_grad()) {
        auto gw = weight.ensure_grad();
        std::vector<double> acc(r.k);
        for (std::size_t o = 0; o < out_d; ++o) {
          std::fill(acc.begin(), acc.end(), 0.0);
          for (std::size_t n = 0; n < r.n; ++n) {
            const double g = go[n * out_d + o];
            const real* xi = xv.data() + n * r.k;
            for (std::size_t i = 0; i < r.k; ++i) acc[i] += g * xi[i];
          }
          for (std::size_t i = 0; i < r.k; ++i) gw[o * r.k + i] += static_cast<real>(acc[i]);
        }
      }
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.ensure_grad();
        for (std::size_t o = 0; o < out_d; ++o) {
          double s = 0;
          for (std::size_t n = 0; n < r.n; ++n) s += go[n * out_d + o];
          gb[o] += static_cast<real>(s);
        }
      }
    });
  }
  return out;
}

namespace {

// Stable row softmax; also returns log-sum-exp per row for the loss.
void softmax_rows(std::span<const real> z, Rows r, std::span<real> probs,
                  std::vector<double>& lse) {
  lse.resize(r.n);
  for (std::size_t n = 0; n < r.n; ++n) {
    const real* row = z.data() + n * r.k;
    const double mx = *std::max_element(row, row + r.k);
    double s = 0;
    for (std::size_t i = 0; i < r.k; ++i) s += std::exp(double(row[i]) - mx);
    lse[n] = mx + std::log(s);
    for (std::size_t i = 0; i < r.k; ++i)
      probs[n * r.k + i] = static_cast<real>(std::exp(double(row[i]) - lse[n]));
  }
}

constexpr double kFloor = 1e-30;

}  // namespace

Tensor softmax(Tape& tape, const Tensor& logits) {
  const Rows r = row_dims(logits, "softmax");
  Tensor out(logits.shape());
  std::vector<double> lse;
  softmax_rows(logits.data(), r, out.data(), lse);
  if (tape.wants({&logits})) {
    tape.record(out, {logits}, [logits, out, r]() mutable {
      auto gz = logits.ensure_grad();
      auto go = out.grad();
      auto p = out.data();
      for (std::size_t n = 0; n < r.n; ++n) {
        double dot = 0;
        for (std::size_t i = 0; i < r.k; ++i) dot += double(go[n * r.k + i]) * p[n * r.k + i];
        for (std::size_t i = 0; i < r.k; ++i) {
          const std::size_t j = n * r.k + i;
          gz[j] += static_cast<real>(p[j] * (go[j] - dot));
        }
      }
    });
  }
  return out;
}

CrossEntropy softmax_cross_entropy(Tape& tape, const Tensor& logits,
                                   std::span<const std::size_t> labels) {
  const Rows r = row_dims(logits, "softmax_cross_entropy");
  require(labels.size() == r.n, ErrorKind::Input, "one label per logit row expected");
  for (std::size_t l : labels)
    require(l < r.k, ErrorKind::Input,
            "label " + std::to_string(l) + " out of range [0," + std::to_string(r.k) + ")");
  CrossEntropy ce;
  ce.probs = Tensor(logits.shape());
  std::vector<double> lse;
  auto z = logits.data();
  softmax_rows(z, r, ce.probs.data(), lse);
  double total = 0;
  for (std::size_t n = 0; n < r.n; ++n) total += lse[n] - double(z[n * r.k + labels[n]]);
  ce.loss.value = total / double(r.n);
  ce.loss.tensor = Tensor::scalar(static_cast<real>(ce.loss.value));
  if (tape.wants({&logits})) {
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    Tensor probs = ce.probs;
    Tensor loss = ce.loss.tensor;
    tape.record(loss, {logits}, [logits, probs, loss, lab, r]() mutable {
      auto gz = logits.ensure_grad();
      auto p = probs.data();
      const double g = double(loss.grad()[0]) / double(r.n);
      for (std::size_t n = 0; n < r.n; ++n)
        for (std::size_t i = 0; i < r.k; ++i) {
          const std::size_t j = n * r.k + i;
          gz[j] += static_cast<real>(g * (double(p[j]) - (i == lab[n] ? 1.0 : 0.0)));
        }
    });
  }
  return ce;
}

Loss negative_log_likelihood(Tape& tape, const Tensor& probs,
                             std::span<const std::size_t> labels) {
  const Rows r = row_dims(probs, "negative_log_likelihood");
  require(labels.size() == r.n, ErrorKind::Input, "one label per row expected");
  auto p = probs.data();
  double total = 0;
  for (std::size_t n = 0; n < r.n; ++n) {
    require(labels[n] < r.k, ErrorKind::Input, "label out of range");
    total -= std::log(std::max(double(p[n * r.k + labels[n]]), kFloor));
  }
  Loss loss{Tensor::scalar(static_cast<real>(total / double(r.n))), total / double(r.n)};
  if (tape.wants({&probs})) {
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    Tensor out = loss.tensor;
    tape.record(out, {probs}, [probs, out, lab, r]() mutable {
      auto gp = probs.ensure_grad();
      auto p = probs.data();
      const double g = double(out.grad()[0]) / double(r.n);
      for (std::size_t n = 0; n < r.n; ++n) {
        const std::size_t j = n * r.k + lab[n];
        gp[j] -= static_cast<real>(g / std::max(double(p[j]), kFloor));
      }
    });
  }
  return loss;
}

ALNET_NS_END
