#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbid/common.hpp"
#include "sbid/dependency_map.hpp"
#include "sbid/nn.hpp"

// Dependency detection over subband frame histories: feature extraction, a
// small convolutional detector trained from scratch, a synthetic example
// generator for that training, and a training-free coherence fallback.

namespace sbid {

// 5 x bins x len real tensor. Channels: excitation real part, excitation
// imaginary part, newest measurement of the queried bin tiled along time
// (real then imaginary, other rows zero), and the energy-normalized
// cross-correlation magnitude per excitation bin at lags 0..len-1.
struct FeatureTensor {
  Eigen::Index bins = 0;
  Eigen::Index len = 0;
  std::array<rmat, 5> ch;
};

// Histories are bins x W with the newest frame in the last column. Channels
// 1-2 take the trailing `len` excitation frames; the correlation channel uses
// the whole window, so longer histories sharpen it. Each channel is
// standardized to zero mean and unit variance unless it is constant.
inline FeatureTensor build_features(const cmat& x_hist, const cmat& y_hist,
                                    Eigen::Index query_bin, Eigen::Index len) {
  const Eigen::Index bins = x_hist.rows();
  const Eigen::Index w = x_hist.cols();
  if (y_hist.rows() != bins || y_hist.cols() != w)
    throw shape_error("build_features: excitation/measurement history shapes differ");
  if (bins < 1 || len < 1) throw config_error("build_features: bins and window must be positive");
  if (query_bin < 0 || query_bin >= bins)
    throw shape_error("build_features: query bin out of range");
  if (w < len) throw needs_more_data("build_features: history shorter than the feature window");

  FeatureTensor f;
  f.bins = bins;
  f.len = len;
  f.ch[0] = x_hist.rightCols(len).real();
  f.ch[1] = x_hist.rightCols(len).imag();
  f.ch[2] = rmat::Zero(bins, len);
  f.ch[3] = rmat::Zero(bins, len);
  const cplx y_now = y_hist(query_bin, w - 1);
  f.ch[2].row(query_bin).setConstant(y_now.real());
  f.ch[3].row(query_bin).setConstant(y_now.imag());

  f.ch[4] = rmat::Zero(bins, len);
  const double ye = y_hist.row(query_bin).squaredNorm();
  for (Eigen::Index k = 0; k < bins; ++k) {
    const double xe = x_hist.row(k).squaredNorm();
    const double den = std::sqrt(xe * ye) + 1e-12;
    for (Eigen::Index lag = 0; lag < len && lag < w; ++lag) {
      const Eigen::Index n = w - lag;
      const cplx c = x_hist.row(k).head(n).dot(y_hist.row(query_bin).segment(lag, n));
      f.ch[4](k, lag) = std::abs(c) / den;
    }
  }

  for (auto& m : f.ch) {
    const double mean = m.mean();
    const double var = (m.array() - mean).square().sum() / static_cast<double>(m.size());
    if (var > 0.0) m = ((m.array() - mean) / std::sqrt(var)).matrix();
  }
  return f;
}

namespace detail {

constexpr int kConvIn[4] = {5, 16, 16, 16};
constexpr int kConvOut[4] = {16, 16, 16, 16};
constexpr int kKernel[4] = {7, 5, 3, 3};
constexpr int kStride[4] = {1, 3, 3, 3};

}  // namespace detail

// Four time-axis convolutions feeding two dense layers; the head emits one
// probability per excitation bin for the queried output bin.
class DetectorNetwork {
 public:
  DetectorNetwork() = default;

  // Zero-weight network (every output sits at probability one half).
  DetectorNetwork(Eigen::Index bins, Eigen::Index len) { build(bins, len); }

  DetectorNetwork(Eigen::Index bins, Eigen::Index len, rng_t& rng) {
    build(bins, len);
    for (int i = 0; i < 4; ++i)
      he_init(rng, conv_[i].weights(),
              static_cast<Eigen::Index>(detail::kConvIn[i]) * detail::kKernel[i]);
    he_init(rng, fc1_.weights(), fc1_.weights().value.rows());
    he_init(rng, fc2_.weights(), fc2_.weights().value.rows());
  }

  Eigen::Index bins() const { return bins_; }
  Eigen::Index len() const { return len_; }
  const std::array<int, 5>& time_widths() const { return t_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Param* p : const_cast<DetectorNetwork*>(this)->param_blocks())
      n += static_cast<std::size_t>(p->count());
    return n;
  }

  std::vector<Param*> param_blocks() {
    return {&conv_[0].weights(), &conv_[0].bias(), &conv_[1].weights(), &conv_[1].bias(),
            &conv_[2].weights(), &conv_[2].bias(), &conv_[3].weights(), &conv_[3].bias(),
            &fc1_.weights(),     &fc1_.bias(),     &fc2_.weights(),     &fc2_.bias()};
  }

  void zero_grad() {
    for (Param* p : param_blocks()) p->grad.setZero();
  }

  void scale_grads(double s) {
    for (Param* p : param_blocks()) p->grad *= s;
  }

  rvec logits(const FeatureTensor& f) const {
    check_tensor(f);
    ChanStack a(5);
    for (int i = 0; i < 5; ++i) a[static_cast<std::size_t>(i)] = f.ch[static_cast<std::size_t>(i)];
    for (int i = 0; i < 4; ++i) {
      ChanStack z = conv_[i].forward(conv_[i].im2col(a), bins_);
      for (auto& m : z) m = leaky_relu(m);
      a = std::move(z);
    }
    const rvec h = leaky_relu(fc1_.forward(flatten(a)));
    return fc2_.forward(h);
  }

  // Inference probabilities; dropout never applies here.
  rvec forward(const FeatureTensor& f) const {
    rvec z = logits(f);
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = sigmoid(z[i]);
    return z;
  }

  // Cross-entropy against the label row, gradients accumulated into the
  // parameter blocks. Deterministic path: no dropout.
  double loss_and_grad(const FeatureTensor& f, const rvec& label) {
    return run_backprop(f, label, 0.0, nullptr);
  }

  // Training path with inverted dropout on both dense-layer inputs.
  double loss_and_grad(const FeatureTensor& f, const rvec& label, double dropout, rng_t& rng) {
    return run_backprop(f, label, dropout, &rng);
  }

  void save(std::ostream& out) const {
    nlohmann::json h;
    h["kind"] = "dependency-detector";
    h["bins"] = bins_;
    h["len"] = len_;
    h["channels"] = {5, 16, 16, 16, 16};
    h["kernels"] = {7, 5, 3, 3};
    h["strides"] = {1, 3, 3, 3};
    h["leak"] = kLeak;
    const std::string hs = h.dump();
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const Param* p : const_cast<DetectorNetwork*>(this)->param_blocks()) {
      for (Eigen::Index r = 0; r < p->value.rows(); ++r)
        for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
          const double v = p->value(r, c);
          out.write(reinterpret_cast<const char*>(&v), 8);
        }
    }
    if (!out) throw io_error("detector: checkpoint write failed");
  }

  static DetectorNetwork load(std::istream& in) {
    std::uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 4);
    if (!in || hlen == 0 || hlen > (1u << 24)) throw io_error("detector: bad checkpoint header");
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw io_error("detector: truncated checkpoint header");
    const auto h = nlohmann::json::parse(hs, nullptr, false);
    if (h.is_discarded()) throw io_error("detector: checkpoint header is not valid JSON");
    if (h.value("kind", "") != std::string("dependency-detector"))
      throw io_error("detector: checkpoint kind mismatch");
    const std::vector<int> kernels = h.value("kernels", std::vector<int>{});
    const std::vector<int> strides = h.value("strides", std::vector<int>{});
    for (int i = 0; i < 4; ++i) {
      if (kernels.size() != 4 || strides.size() != 4 || kernels[static_cast<std::size_t>(i)] != detail::kKernel[i] ||
          strides[static_cast<std::size_t>(i)] != detail::kStride[i])
        throw io_error("detector: checkpoint architecture mismatch");
    }
    DetectorNetwork net(h.value("bins", Eigen::Index(0)), h.value("len", Eigen::Index(0)));
    for (Param* p : net.param_blocks()) {
      for (Eigen::Index r = 0; r < p->value.rows(); ++r)
        for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
          double v = 0.0;
          in.read(reinterpret_cast<char*>(&v), 8);
          if (!in) throw io_error("detector: truncated checkpoint payload");
          p->value(r, c) = v;
        }
    }
    return net;
  }

 private:
  void build(Eigen::Index bins, Eigen::Index len) {
    if (bins < 1 || len < 1) throw config_error("detector: bins and window must be positive");
    bins_ = bins;
    len_ = len;
    for (int i = 0; i < 4; ++i)
      conv_[i] = ConvTime(detail::kConvIn[i], detail::kConvOut[i], detail::kKernel[i],
                          detail::kStride[i]);
    t_[0] = static_cast<int>(len);
    for (int i = 0; i < 4; ++i) {
      t_[i + 1] = conv_[i].out_time(t_[i]);
      if (t_[i + 1] < 1) throw config_error("detector: time axis collapsed in the conv stack");
    }
    flat_ = static_cast<Eigen::Index>(detail::kConvOut[3]) * bins_ * t_[4];
    fc1_ = Dense(flat_, 2 * bins_);
    fc2_ = Dense(2 * bins_, bins_);
  }

  void check_tensor(const FeatureTensor& f) const {
    if (f.bins != bins_ || f.len != len_)
      throw shape_error("detector: feature tensor shape does not match the network");
    for (const auto& m : f.ch)
      if (m.rows() != bins_ || m.cols() != len_)
        throw shape_error("detector: feature channel shape does not match the network");
  }

  rvec flatten(const ChanStack& a) const {
    const Eigen::Index tw = a[0].cols();
    rvec v(static_cast<Eigen::Index>(a.size()) * bins_ * tw);
    Eigen::Index idx = 0;
    for (const auto& m : a)
      for (Eigen::Index r = 0; r < bins_; ++r)
        for (Eigen::Index t = 0; t < tw; ++t) v[idx++] = m(r, t);
    return v;
  }

  ChanStack unflatten(const rvec& v) const {
    ChanStack a(static_cast<std::size_t>(detail::kConvOut[3]));
    Eigen::Index idx = 0;
    for (auto& m : a) {
      m.resize(bins_, t_[4]);
      for (Eigen::Index r = 0; r < bins_; ++r)
        for (Eigen::Index t = 0; t < t_[4]; ++t) m(r, t) = v[idx++];
    }
    return a;
  }

  double run_backprop(const FeatureTensor& f, const rvec& label, double dropout, rng_t* rng) {
    check_tensor(f);
    if (label.size() != bins_) throw shape_error("detector: label length does not match bins");

    ChanStack a(5);
    for (int i = 0; i < 5; ++i) a[static_cast<std::size_t>(i)] = f.ch[static_cast<std::size_t>(i)];
    std::array<rmat, 4> cols;
    std::array<ChanStack, 4> pre;
    for (int i = 0; i < 4; ++i) {
      cols[static_cast<std::size_t>(i)] = conv_[i].im2col(a);
      pre[static_cast<std::size_t>(i)] = conv_[i].forward(cols[static_cast<std::size_t>(i)], bins_);
      ChanStack act(pre[static_cast<std::size_t>(i)].size());
      for (std::size_t c = 0; c < act.size(); ++c)
        act[c] = leaky_relu(pre[static_cast<std::size_t>(i)][c]);
      a = std::move(act);
    }

    const rvec flat = flatten(a);
    rvec m0, m1;
    rvec x1 = flat;
    if (rng) {
      m0 = dropout_mask(*rng, flat.size(), dropout);
      x1 = flat.cwiseProduct(m0);
    }
    const rvec z1 = fc1_.forward(x1);
    const rvec h1 = leaky_relu(z1);
    rvec x2 = h1;
    if (rng) {
      m1 = dropout_mask(*rng, h1.size(), dropout);
      x2 = h1.cwiseProduct(m1);
    }
    const rvec z2 = fc2_.forward(x2);

    rvec d_z2;
    const double loss = bce_with_logits(z2, label, &d_z2);

    const rvec d_x2 = fc2_.backward(x2, d_z2);
    const rvec d_h1 = rng ? rvec(d_x2.cwiseProduct(m1)) : d_x2;
    const rvec d_z1 = leaky_relu_grad(z1, d_h1);
    const rvec d_x1 = fc1_.backward(x1, d_z1);
    const rvec d_flat = rng ? rvec(d_x1.cwiseProduct(m0)) : d_x1;

    ChanStack d_a = unflatten(d_flat);
    for (int i = 3; i >= 0; --i) {
      ChanStack d_pre(d_a.size());
      for (std::size_t c = 0; c < d_a.size(); ++c)
        d_pre[c] = leaky_relu_grad(pre[static_cast<std::size_t>(i)][c], d_a[c]);
      d_a = conv_[i].backward(d_pre, cols[static_cast<std::size_t>(i)], t_[i]);
    }
    return loss;
  }

  Eigen::Index bins_ = 0, len_ = 0, flat_ = 0;
  std::array<int, 5> t_ = {0, 0, 0, 0, 0};
  std::array<ConvTime, 4> conv_;
  Dense fc1_, fc2_;
};

// Row k' of the returned map is the thresholded network output for query bin
// k'; ties at the threshold count as detections.
inline DependencyMap predict_map(const DetectorNetwork& net, const cmat& x_hist,
                                 const cmat& y_hist, double threshold = 0.5) {
  DependencyMap map(net.bins());
  for (Eigen::Index q = 0; q < net.bins(); ++q) {
    const FeatureTensor f = build_features(x_hist, y_hist, q, net.len());
    const rvec p = net.forward(f);
    for (Eigen::Index k = 0; k < net.bins(); ++k) map.set(q, k, p[k] >= threshold);
  }
  return map;
}

namespace detail {

inline cvec unit_norm_fir(rng_t& rng, Eigen::Index taps) {
  cvec f = crandn(rng, taps);
  const double n = f.norm();
  if (n > 0.0) f /= n;
  else f[0] = 1.0;
  return f;
}

// dst.row(row)[t] += sum_u fir[u] * src[t - u]; src must not alias that row.
inline void add_filtered(const Eigen::RowVectorXcd& src, const cvec& fir, cmat& dst,
                         Eigen::Index row) {
  const Eigen::Index n = src.size();
  for (Eigen::Index u = 0; u < fir.size(); ++u)
    dst.row(row).tail(n - u) += fir[u] * src.head(n - u);
}

}  // namespace detail

struct SyntheticExample {
  cmat excitation;   // bins x frames
  cmat measurement;  // bins x frames
  DependencyMap label;
};

// Subband-domain generator: each excitation bin is white complex noise shaped
// by a short random filter; each true map entry routes an excitation bin
// through another short random channel into the measurement bin, plus white
// measurement noise. identity_channels replaces every filter with a unit tap.
inline SyntheticExample generate_synthetic_example(rng_t& rng, Eigen::Index bins,
                                                   Eigen::Index len, double density,
                                                   double noise,
                                                   bool identity_channels = false,
                                                   Eigen::Index frames = 0) {
  if (bins < 1 || len < 1)
    throw config_error("generate_synthetic_example: bins and window must be positive");
  if (density < 0.0 || density > 1.0)
    throw config_error("generate_synthetic_example: density must be in [0, 1]");
  if (noise < 0.0) throw config_error("generate_synthetic_example: noise must be nonnegative");
  if (frames <= 0) frames = 256 + len;
  if (frames < len)
    throw config_error("generate_synthetic_example: frames shorter than the feature window");

  SyntheticExample ex{cmat::Zero(bins, frames), cmat::Zero(bins, frames), DependencyMap(bins)};
  for (Eigen::Index k = 0; k < bins; ++k) {
    const cvec drive = crandn(rng, frames);
    if (identity_channels) {
      ex.excitation.row(k) = drive.transpose();
    } else {
      const auto taps = 1 + static_cast<Eigen::Index>(Gaussian::uniform01(rng) * 5.0);
      const cvec fir = detail::unit_norm_fir(rng, taps);
      detail::add_filtered(drive.transpose(), fir, ex.excitation, k);
    }
  }
  for (Eigen::Index ko = 0; ko < bins; ++ko) {
    for (Eigen::Index k = 0; k < bins; ++k) {
      if (Gaussian::uniform01(rng) >= density) continue;
      ex.label.set(ko, k, true);
      cvec fir;
      if (identity_channels) {
        fir = cvec::Ones(1);
      } else {
        const auto taps = 1 + static_cast<Eigen::Index>(Gaussian::uniform01(rng) * 3.0);
        fir = detail::unit_norm_fir(rng, taps);
      }
      detail::add_filtered(Eigen::RowVectorXcd(ex.excitation.row(k)), fir, ex.measurement, ko);
    }
  }
  if (noise > 0.0) {
    for (Eigen::Index ko = 0; ko < bins; ++ko)
      for (Eigen::Index t = 0; t < frames; ++t) ex.measurement(ko, t) += noise * crandn(rng);
  }
  return ex;
}

struct DetectorExample {
  FeatureTensor features;
  rvec label;  // 0/1 per excitation bin for the queried output bin
  Eigen::Index query_bin = 0;
};

// One record per generated system, with a uniformly drawn query bin.
inline std::vector<DetectorExample> make_dataset(rng_t& rng, Eigen::Index count,
                                                 Eigen::Index bins, Eigen::Index len,
                                                 double density, double noise) {
  if (count < 0) throw config_error("make_dataset: count must be nonnegative");
  std::vector<DetectorExample> ds;
  ds.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) {
    const SyntheticExample ex = generate_synthetic_example(rng, bins, len, density, noise);
    const auto q = static_cast<Eigen::Index>(Gaussian::uniform01(rng) * static_cast<double>(bins));
    DetectorExample rec;
    rec.features = build_features(ex.excitation, ex.measurement, q, len);
    rec.label = rvec::Zero(bins);
    for (Eigen::Index k = 0; k < bins; ++k) rec.label[k] = ex.label.at(q, k) ? 1.0 : 0.0;
    rec.query_bin = q;
    ds.push_back(std::move(rec));
  }
  return ds;
}

struct TrainingConfig {
  double learn_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int epochs = 10;
  int batch_size = 64;
  double density = 0.3;  // synthetic map sparsity
  double noise = 0.1;    // synthetic measurement noise
  double dropout = 0.1;
  std::uint64_t seed = 1;

  // Zero learn rate is allowed: it makes a run a pure evaluation pass.
  void validate() const {
    if (learn_rate < 0.0) throw config_error("training: learn rate must be nonnegative");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw config_error("training: betas must be in [0, 1)");
    if (epochs < 0) throw config_error("training: epochs must be nonnegative");
    if (batch_size < 1) throw config_error("training: batch size must be positive");
    if (density < 0.0 || density > 1.0) throw config_error("training: density must be in [0, 1]");
    if (noise < 0.0) throw config_error("training: noise must be nonnegative");
    if (dropout < 0.0 || dropout >= 1.0) throw config_error("training: dropout must be in [0, 1)");
  }
};

struct TrainReport {
  std::vector<double> train_loss;  // per epoch, mean over batches
  std::vector<double> val_loss;    // per epoch; empty when nothing is held out
};

// The tail fifth of the records is held out, sizing validation at a quarter
// of what remains for training. Batch losses are recorded before the step.
inline TrainReport train_detector(DetectorNetwork& net,
                                  const std::vector<DetectorExample>& dataset,
                                  const TrainingConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw config_error("train_detector: empty dataset");
  const std::size_t n_val = dataset.size() / 5;
  const std::size_t n_train = dataset.size() - n_val;

  rng_t rng(cfg.seed);
  Adam opt(cfg.learn_rate, cfg.beta1, cfg.beta2);
  const auto params = net.param_blocks();
  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

  TrainReport rep;
  for (int ep = 0; ep < cfg.epochs; ++ep) {
    deterministic_shuffle(order, rng);
    double ep_acc = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < n_train; at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(n_train, at + static_cast<std::size_t>(cfg.batch_size));
      net.zero_grad();
      double acc = 0.0;
      for (std::size_t i = at; i < stop; ++i) {
        const DetectorExample& rec = dataset[order[i]];
        acc += net.loss_and_grad(rec.features, rec.label, cfg.dropout, rng);
      }
      const double scale = 1.0 / static_cast<double>(stop - at);
      net.scale_grads(scale);
      acc *= scale;
      if (!std::isfinite(acc))
        throw training_error("train_detector: loss diverged at epoch " + std::to_string(ep) +
                             ", batch " + std::to_string(batches));
      opt.step(params);
      ep_acc += acc;
      ++batches;
    }
    rep.train_loss.push_back(batches > 0 ? ep_acc / static_cast<double>(batches) : 0.0);
    if (n_val > 0) {
      double v = 0.0;
      for (std::size_t i = n_train; i < dataset.size(); ++i)
        v += bce_with_logits(net.logits(dataset[i].features), dataset[i].label);
      v /= static_cast<double>(n_val);
      if (!std::isfinite(v))
        throw training_error("train_detector: validation loss diverged at epoch " +
                             std::to_string(ep));
      rep.val_loss.push_back(v);
    }
  }
  return rep;
}

// Element-wise F1 over the record range [begin, end).
inline double evaluate_f1(const DetectorNetwork& net, const std::vector<DetectorExample>& ds,
                          std::size_t begin, std::size_t end, double threshold = 0.5) {
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = begin; i < end && i < ds.size(); ++i) {
    const rvec p = net.forward(ds[i].features);
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const bool pred = p[k] >= threshold;
      const bool truth = ds[i].label[k] > 0.5;
      if (pred && truth) tp += 1.0;
      else if (pred && !truth) fp += 1.0;
      else if (!pred && truth) fn += 1.0;
    }
  }
  const double den = 2.0 * tp + fp + fn;
  return den > 0.0 ? 2.0 * tp / den : 0.0;
}

// Training-free fallback: entry (k_o, k) is true when the magnitude-squared
// coherence between excitation bin k and measurement bin k_o, maximized over
// nonnegative lags up to max_lag, exceeds the threshold.
inline DependencyMap coherence_detector(const cmat& x_hist, const cmat& y_hist, double threshold,
                                        Eigen::Index max_lag = 8) {
  const Eigen::Index bins = x_hist.rows();
  const Eigen::Index w = x_hist.cols();
  if (y_hist.rows() != bins || y_hist.cols() != w)
    throw shape_error("coherence_detector: excitation/measurement history shapes differ");
  if (threshold <= 0.0 || threshold >= 1.0)
    throw config_error("coherence_detector: threshold must be in (0, 1)");
  if (max_lag < 0) throw config_error("coherence_detector: max lag must be nonnegative");
  if (w < 64) throw needs_more_data("coherence_detector: need at least 64 frames of history");

  DependencyMap map(bins);
  for (Eigen::Index ko = 0; ko < bins; ++ko) {
    for (Eigen::Index k = 0; k < bins; ++k) {
      double best = 0.0;
      for (Eigen::Index lag = 0; lag <= max_lag; ++lag) {
        const Eigen::Index n = w - lag;
        if (n < 2) break;
        const auto a = x_hist.row(k).head(n);
        const auto b = y_hist.row(ko).segment(lag, n);
        const double ea = a.squaredNorm();
        const double eb = b.squaredNorm();
        if (ea <= 0.0 || eb <= 0.0) continue;
        const cplx c = a.dot(b);
        best = std::max(best, std::norm(c) / (ea * eb));
      }
      map.set(ko, k, best > threshold);
    }
  }
  return map;
}

// Dataset container: one length-prefixed JSON header plus a float32 tensor
// payload per record, concatenated.
inline void save_dataset(const std::vector<DetectorExample>& ds, std::ostream& out) {
  for (const DetectorExample& rec : ds) {
    nlohmann::json h;
    h["bins"] = rec.features.bins;
    h["len"] = rec.features.len;
    h["query"] = rec.query_bin;
    std::string lab(static_cast<std::size_t>(rec.label.size()), '0');
    for (Eigen::Index k = 0; k < rec.label.size(); ++k)
      if (rec.label[k] > 0.5) lab[static_cast<std::size_t>(k)] = '1';
    h["label"] = lab;
    const std::string hs = h.dump();
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& m : rec.features.ch)
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          const float v = static_cast<float>(m(r, c));
          out.write(reinterpret_cast<const char*>(&v), 4);
        }
  }
  if (!out) throw io_error("dataset: write failed");
}

inline std::vector<DetectorExample> load_dataset(std::istream& in) {
  std::vector<DetectorExample> ds;
  while (true) {
    std::uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 4);
    if (in.eof() && in.gcount() == 0) break;
    if (!in || hlen == 0 || hlen > (1u << 24)) throw io_error("dataset: bad record header");
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw io_error("dataset: truncated record header");
    const auto h = nlohmann::json::parse(hs, nullptr, false);
    if (h.is_discarded()) throw io_error("dataset: record header is not valid JSON");
    const auto bins = h.value("bins", Eigen::Index(0));
    const auto len = h.value("len", Eigen::Index(0));
    const std::string lab = h.value("label", "");
    if (bins < 1 || len < 1 || static_cast<Eigen::Index>(lab.size()) != bins)
      throw io_error("dataset: inconsistent record header");
    DetectorExample rec;
    rec.features.bins = bins;
    rec.features.len = len;
    rec.query_bin = h.value("query", Eigen::Index(0));
    rec.label = rvec::Zero(bins);
    for (Eigen::Index k = 0; k < bins; ++k)
      rec.label[k] = lab[static_cast<std::size_t>(k)] == '1' ? 1.0 : 0.0;
    for (auto& m : rec.features.ch) {
      m.resize(bins, len);
      for (Eigen::Index r = 0; r < bins; ++r)
        for (Eigen::Index c = 0; c < len; ++c) {
          float v = 0.0f;
          in.read(reinterpret_cast<char*>(&v), 4);
          if (!in) throw io_error("dataset: truncated record payload");
          m(r, c) = static_cast<double>(v);
        }
    }
    ds.push_back(std::move(rec));
  }
  return ds;
}

inline void save_detector_file(const DetectorNetwork& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("detector: cannot open checkpoint for writing: " + path);
  net.save(out);
}

inline DetectorNetwork load_detector_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("detector: cannot open checkpoint: " + path);
  return DetectorNetwork::load(in);
}

inline void save_dataset_file(const std::vector<DetectorExample>& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("dataset: cannot open for writing: " + path);
  save_dataset(ds, out);
}

inline std::vector<DetectorExample> load_dataset_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("dataset: cannot open: " + path);
  return load_dataset(in);
}

}  // namespace sbid
