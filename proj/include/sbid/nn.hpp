#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sbid/common.hpp"

// Plain-Eigen network primitives: time-axis convolution via im2col, dense
// layers, leaky rectifier, logit-domain cross entropy, Adam. Inference is
// pure; gradients accumulate into the owning Param blocks. No ML runtime.

namespace sbid {

// One learnable tensor with its gradient and Adam moments, all same shape.
struct Param {
  rmat value, grad, m1, m2;

  void setup(Eigen::Index rows, Eigen::Index cols) {
    value = rmat::Zero(rows, cols);
    grad = rmat::Zero(rows, cols);
    m1 = rmat::Zero(rows, cols);
    m2 = rmat::Zero(rows, cols);
  }
  Eigen::Index count() const { return value.size(); }
};

class Adam {
 public:
  Adam(double learn_rate, double beta1, double beta2)
      : lr_(learn_rate), b1_(beta1), b2_(beta2) {}

  void step(const std::vector<Param*>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (Param* p : params) {
      p->m1 = b1_ * p->m1 + (1.0 - b1_) * p->grad;
      p->m2 = b2_ * p->m2 + (1.0 - b2_) * p->grad.cwiseProduct(p->grad);
      p->value.array() -=
          lr_ * (p->m1.array() / c1) / ((p->m2.array() / c2).sqrt() + 1e-8);
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_;
  std::int64_t t_ = 0;
};

constexpr double kLeak = 0.01;

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

template <class D>
auto leaky_relu(const Eigen::MatrixBase<D>& z) {
  return z.unaryExpr([](double v) { return v > 0.0 ? v : kLeak * v; }).eval();
}

// Gradient through the rectifier: upstream masked by the cached pre-activation.
template <class D>
auto leaky_relu_grad(const Eigen::MatrixBase<D>& z, const Eigen::MatrixBase<D>& upstream) {
  return upstream
      .binaryExpr(z, [](double g, double v) { return v > 0.0 ? g : kLeak * g; })
      .eval();
}

// Mean stable logit-domain binary cross entropy; d_logits (if given) receives
// (sigmoid(z) - y) / n so the caller can chain it directly.
inline double bce_with_logits(const rvec& z, const rvec& y, rvec* d_logits = nullptr) {
  if (z.size() != y.size()) throw shape_error("bce_with_logits: logits/labels size mismatch");
  if (z.size() == 0) throw shape_error("bce_with_logits: empty input");
  const double n = static_cast<double>(z.size());
  if (d_logits) d_logits->resize(z.size());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    acc += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
    if (d_logits) (*d_logits)[i] = (sigmoid(z[i]) - y[i]) / n;
  }
  return acc / n;
}

// Inverted dropout: entries are 0 with probability p, else 1/(1-p), so the
// inference path needs no rescaling.
inline rvec dropout_mask(rng_t& rng, Eigen::Index n, double p) {
  if (p < 0.0 || p >= 1.0) throw config_error("dropout_mask: probability must be in [0, 1)");
  const double keep = 1.0 - p;
  rvec m(n);
  for (Eigen::Index i = 0; i < n; ++i)
    m[i] = Gaussian::uniform01(rng) < keep ? 1.0 / keep : 0.0;
  return m;
}

inline void he_init(rng_t& rng, Param& p, Eigen::Index fan_in) {
  Gaussian g;
  const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Eigen::Index r = 0; r < p.value.rows(); ++r)
    for (Eigen::Index c = 0; c < p.value.cols(); ++c) p.value(r, c) = s * g(rng);
}

// Multichannel activation: one bins x time matrix per channel.
using ChanStack = std::vector<rmat>;

// Convolution along the time axis only (kernel height 1), zero padding of
// floor(kt/2) columns per side; T_out = (T + 2*(kt/2) - kt) / stride + 1.
// The bin axis rides along unchanged, so every bin row shares the kernel.
class ConvTime {
 public:
  ConvTime() = default;
  ConvTime(int in_ch, int out_ch, int kt, int stride)
      : in_ch_(in_ch), out_ch_(out_ch), kt_(kt), stride_(stride), pad_(kt / 2) {
    w_.setup(static_cast<Eigen::Index>(in_ch) * kt, out_ch);
    b_.setup(out_ch, 1);
  }

  int out_time(int t_in) const { return (t_in + 2 * pad_ - kt_) / stride_ + 1; }

  // Patch matrix with rows grouped by output time: row t*bins + r holds the
  // receptive field of (bin r, output column t).
  rmat im2col(const ChanStack& in) const {
    const Eigen::Index bins = in[0].rows();
    const Eigen::Index t_in = in[0].cols();
    const Eigen::Index t_out = out_time(static_cast<int>(t_in));
    rmat col = rmat::Zero(bins * t_out, static_cast<Eigen::Index>(in_ch_) * kt_);
    for (Eigen::Index t = 0; t < t_out; ++t) {
      for (int u = 0; u < kt_; ++u) {
        const Eigen::Index src = t * stride_ + u - pad_;
        if (src < 0 || src >= t_in) continue;
        for (int c = 0; c < in_ch_; ++c)
          col.block(t * bins, static_cast<Eigen::Index>(c) * kt_ + u, bins, 1) =
              in[static_cast<std::size_t>(c)].col(src);
      }
    }
    return col;
  }

  ChanStack forward(const rmat& col, Eigen::Index bins) const {
    const Eigen::Index t_out = col.rows() / bins;
    rmat flat = col * w_.value;
    flat.rowwise() += b_.value.col(0).transpose();
    ChanStack out(static_cast<std::size_t>(out_ch_));
    for (int oc = 0; oc < out_ch_; ++oc) {
      rmat m(bins, t_out);
      for (Eigen::Index t = 0; t < t_out; ++t) m.col(t) = flat.block(t * bins, oc, bins, 1);
      out[static_cast<std::size_t>(oc)] = std::move(m);
    }
    return out;
  }

  // Accumulates weight/bias gradients and returns the gradient with respect
  // to the forward input; `col` is the cached im2col of that input.
  ChanStack backward(const ChanStack& d_out, const rmat& col, Eigen::Index t_in) {
    const Eigen::Index bins = d_out[0].rows();
    const Eigen::Index t_out = d_out[0].cols();
    rmat d_flat(bins * t_out, out_ch_);
    for (int oc = 0; oc < out_ch_; ++oc)
      for (Eigen::Index t = 0; t < t_out; ++t)
        d_flat.block(t * bins, oc, bins, 1) = d_out[static_cast<std::size_t>(oc)].col(t);
    w_.grad += col.transpose() * d_flat;
    b_.grad.col(0) += d_flat.colwise().sum().transpose();
    const rmat d_col = d_flat * w_.value.transpose();
    ChanStack d_in(static_cast<std::size_t>(in_ch_));
    for (int c = 0; c < in_ch_; ++c)
      d_in[static_cast<std::size_t>(c)] = rmat::Zero(bins, t_in);
    for (Eigen::Index t = 0; t < t_out; ++t) {
      for (int u = 0; u < kt_; ++u) {
        const Eigen::Index src = t * stride_ + u - pad_;
        if (src < 0 || src >= t_in) continue;
        for (int c = 0; c < in_ch_; ++c)
          d_in[static_cast<std::size_t>(c)].col(src) +=
              d_col.block(t * bins, static_cast<Eigen::Index>(c) * kt_ + u, bins, 1);
      }
    }
    return d_in;
  }

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return kt_; }
  int stride() const { return stride_; }
  Param& weights() { return w_; }
  Param& bias() { return b_; }
  const Param& weights() const { return w_; }
  const Param& bias() const { return b_; }

 private:
  int in_ch_ = 0, out_ch_ = 0, kt_ = 1, stride_ = 1, pad_ = 0;
  Param w_, b_;
};

class Dense {
 public:
  Dense() = default;
  Dense(Eigen::Index in, Eigen::Index out) {
    w_.setup(in, out);
    b_.setup(out, 1);
  }

  rvec forward(const rvec& x) const { return w_.value.transpose() * x + b_.value.col(0); }

  rvec backward(const rvec& x, const rvec& d_z) {
    w_.grad += x * d_z.transpose();
    b_.grad.col(0) += d_z;
    return w_.value * d_z;
  }

  Param& weights() { return w_; }
  Param& bias() { return b_; }
  const Param& weights() const { return w_; }
  const Param& bias() const { return b_; }

 private:
  Param w_, b_;
};

// Fisher-Yates with the shared uniform source; std::shuffle's draw sequence
// is implementation-defined and would break run reproducibility.
template <class T>
void deterministic_shuffle(std::vector<T>& v, rng_t& rng) {
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    const auto span = static_cast<double>(v.size() - i);
    const auto j = i + static_cast<std::size_t>(Gaussian::uniform01(rng) * span);
    std::swap(v[i], v[j]);
  }
}

}  // namespace sbid
