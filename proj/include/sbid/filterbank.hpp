#pragma once

#include <algorithm>
#include <vector>

#include "sbid/common.hpp"
#include "sbid/dft.hpp"

namespace sbid {

// Half-bin-shifted DFT filterbank. Analysis of bin k at block l:
//   X[k,l] = sum_m x[l*N_h + m] * w_a[m] * e^{-j(2pi k + pi)(l*N_h + m)/N_w}
// The absolute-sample phase (l*N_h + m, not m) is load-bearing: synthesis uses
// the adjoint phase and overlap-add, and the pair reconstructs only when both
// sides agree on it. Only the N_s = N_w/2 positive-frequency bins are kept;
// the half-bin shift puts every retained kernel strictly inside (0, pi), so
// no bin straddles DC or Nyquist and each subband is one-sided in frequency.

enum class WindowKind { SqrtHann, Rectangular };

struct FilterbankConfig {
  size_t window_size = 64;  // N_w
  size_t hop_size = 32;     // N_h
  size_t num_bins = 32;     // N_s, must equal N_w/2
  WindowKind window_kind = WindowKind::SqrtHann;
};

inline FilterbankConfig make_filterbank_config(size_t window_size, size_t hop_size,
                                               WindowKind kind = WindowKind::SqrtHann) {
  FilterbankConfig cfg;
  cfg.window_size = window_size;
  cfg.hop_size = hop_size;
  cfg.num_bins = window_size / 2;
  cfg.window_kind = kind;
  return cfg;
}

inline void validate(const FilterbankConfig& cfg) {
  if (cfg.window_size == 0 || cfg.window_size % 2 != 0)
    throw config_error("filterbank: window_size must be positive and even");
  if (cfg.hop_size == 0 || cfg.hop_size > cfg.window_size)
    throw config_error("filterbank: hop_size must be in [1, window_size]");
  if (cfg.window_size % cfg.hop_size != 0)
    throw config_error("filterbank: hop_size must divide window_size");
  if (cfg.num_bins != cfg.window_size / 2)
    throw config_error("filterbank: num_bins must equal window_size/2");
}

struct WindowPair {
  rvec analysis;
  rvec synthesis;
};

struct SubbandFrame {
  long block_index = 0;
  cvec bins;
};

inline WindowPair make_window_pair(const FilterbankConfig& cfg) {
  validate(cfg);
  const size_t n = cfg.window_size;
  rvec w(n);
  switch (cfg.window_kind) {
    case WindowKind::SqrtHann:
      for (size_t i = 0; i < n; ++i)
        w[static_cast<Eigen::Index>(i)] =
            std::sqrt(0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<real>(i) / static_cast<real>(n)));
      break;
    case WindowKind::Rectangular:
      w.setOnes();
      break;
  }
  return WindowPair{w, w};
}

// Per-sample sum over overlapping hops of w_a[n - l*N_h] * w_s[n - l*N_h],
// evaluated over one hop period in steady state. Constant for a COLA pair.
inline rvec cola_profile(const WindowPair& windows, size_t hop) {
  const size_t n = static_cast<size_t>(windows.analysis.size());
  rvec acc = rvec::Zero(static_cast<Eigen::Index>(hop));
  for (size_t off = 0; off < n; off += hop) {
    for (size_t i = 0; i < hop && off + i < n; ++i) {
      acc[static_cast<Eigen::Index>(i)] += windows.analysis[static_cast<Eigen::Index>(off + i)] *
                                           windows.synthesis[static_cast<Eigen::Index>(off + i)];
    }
  }
  return acc;
}

namespace detail {

inline cplx polar_unit(real angle) { return cplx(std::cos(angle), std::sin(angle)); }

// One analysis block: x_block already windowed, length N_w. Returns N_s bins
// including the absolute-phase factor for block offset n0 = l*N_h.
inline cvec analyze_block(const std::vector<cplx>& windowed, size_t num_bins, long n0,
                          size_t window_size) {
  const real nw = static_cast<real>(window_size);
  std::vector<cplx> buf(window_size);
  for (size_t m = 0; m < window_size; ++m)
    buf[m] = windowed[m] * polar_unit(-M_PI * static_cast<real>(m) / nw);
  dft(buf, false);
  cvec bins(static_cast<Eigen::Index>(num_bins));
  for (size_t k = 0; k < num_bins; ++k) {
    const real phase = -(2.0 * M_PI * static_cast<real>(k) + M_PI) * static_cast<real>(n0) / nw;
    bins[static_cast<Eigen::Index>(k)] = buf[k] * polar_unit(phase);
  }
  return bins;
}

}  // namespace detail

inline std::vector<SubbandFrame> analyze(const std::vector<real>& signal,
                                         const FilterbankConfig& cfg, const WindowPair& windows) {
  validate(cfg);
  if (signal.size() < cfg.window_size)
    throw config_error("filterbank: signal shorter than one analysis window");
  for (real v : signal)
    if (!std::isfinite(v)) throw shape_error("filterbank: non-finite sample");
  const size_t num_frames = (signal.size() - cfg.window_size) / cfg.hop_size + 1;
  std::vector<SubbandFrame> frames;
  frames.reserve(num_frames);
  std::vector<cplx> windowed(cfg.window_size);
  for (size_t l = 0; l < num_frames; ++l) {
    const size_t n0 = l * cfg.hop_size;
    for (size_t m = 0; m < cfg.window_size; ++m)
      windowed[m] = signal[n0 + m] * windows.analysis[static_cast<Eigen::Index>(m)];
    frames.push_back(SubbandFrame{static_cast<long>(l),
                                  detail::analyze_block(windowed, cfg.num_bins,
                                                        static_cast<long>(n0), cfg.window_size)});
  }
  return frames;
}

inline std::vector<real> synthesize(const std::vector<SubbandFrame>& frames,
                                    const FilterbankConfig& cfg, const WindowPair& windows) {
  validate(cfg);
  if (frames.empty()) return {};
  const size_t nw = cfg.window_size;
  const real nwr = static_cast<real>(nw);
  long max_block = 0;
  for (const auto& f : frames) {
    if (static_cast<size_t>(f.bins.size()) != cfg.num_bins)
      throw shape_error("filterbank: frame bin count does not match config");
    max_block = std::max(max_block, f.block_index);
  }
  const size_t out_len = static_cast<size_t>(max_block) * cfg.hop_size + nw;
  std::vector<real> out(out_len, 0.0);
  std::vector<real> norm(out_len, 0.0);

  // Full spectrum by conjugate-symmetric extension: bin k >= N_s mirrors bin
  // N_w-1-k, pairing each retained half-bin frequency with its negative. The
  // block contribution at absolute sample n = n0 + m is
  //   (1/N_w) w_s[m] sum_k spec_full[k] e^{+j(2pi k + pi)(n0 + m)/N_w},
  // realized as an inverse DFT over m plus the half-bin postmodulation.
  std::vector<cplx> spec(nw);
  for (const auto& f : frames) {
    const size_t n0 = static_cast<size_t>(f.block_index) * cfg.hop_size;
    for (size_t k = 0; k < nw; ++k) {
      const cplx base = k < cfg.num_bins
                            ? f.bins[static_cast<Eigen::Index>(k)]
                            : std::conj(f.bins[static_cast<Eigen::Index>(nw - 1 - k)]);
      const real phase = (2.0 * M_PI * static_cast<real>(k) + M_PI) * static_cast<real>(n0) / nwr;
      spec[k] = base * detail::polar_unit(phase);
    }
    dft(spec, true);
    for (size_t m = 0; m < nw; ++m) {
      const cplx v = spec[m] * detail::polar_unit(M_PI * static_cast<real>(m) / nwr) / nwr;
      const real ws = windows.synthesis[static_cast<Eigen::Index>(m)];
      out[n0 + m] += ws * v.real();
      norm[n0 + m] += ws * windows.analysis[static_cast<Eigen::Index>(m)];
    }
  }
  // Overlap-add normalization; samples with no window coverage stay zero.
  for (size_t i = 0; i < out_len; ++i) {
    if (norm[i] > 1e-6) out[i] /= norm[i];
  }
  return out;
}

// Incremental analyzer over a rolling input buffer. Single-writer: one thread
// pushes samples, frames come back as soon as a full window is available.
class StreamingAnalyzer {
 public:
  StreamingAnalyzer(const FilterbankConfig& cfg, const WindowPair& windows)
      : cfg_(cfg), windows_(windows) {
    validate(cfg);
  }

  std::vector<SubbandFrame> push(const std::vector<real>& samples) {
    buffer_.insert(buffer_.end(), samples.begin(), samples.end());
    std::vector<SubbandFrame> frames;
    std::vector<cplx> windowed(cfg_.window_size);
    while (buffer_.size() >= consumed_ + cfg_.window_size) {
      // The phase convention needs the absolute sample index of the block.
      const long n0_abs = next_block_ * static_cast<long>(cfg_.hop_size);
      for (size_t m = 0; m < cfg_.window_size; ++m)
        windowed[m] = buffer_[consumed_ + m] * windows_.analysis[static_cast<Eigen::Index>(m)];
      frames.push_back(SubbandFrame{next_block_, detail::analyze_block(windowed, cfg_.num_bins,
                                                                       n0_abs, cfg_.window_size)});
      ++next_block_;
      consumed_ += cfg_.hop_size;
    }
    // Drop samples no future window can reach.
    if (consumed_ > 4 * cfg_.window_size) {
      const size_t drop = consumed_;
      buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<long>(drop));
      consumed_ = 0;
    }
    return frames;
  }

  long blocks_emitted() const { return next_block_; }

 private:
  FilterbankConfig cfg_;
  WindowPair windows_;
  std::vector<real> buffer_;
  size_t consumed_ = 0;  // start of the next window, relative to buffer_
  long next_block_ = 0;
};

// Discrete Hilbert transform along the bin axis via DFT sign mask.
inline rvec hilbert_bins(const rvec& x) {
  const size_t n = static_cast<size_t>(x.size());
  std::vector<cplx> buf(n);
  for (size_t i = 0; i < n; ++i) buf[i] = cplx(x[static_cast<Eigen::Index>(i)], 0.0);
  dft(buf, false);
  // Multiply by -j*sign(frequency); DC and (for even n) Nyquist stay zeroed.
  for (size_t i = 0; i < n; ++i) {
    if (i == 0 || (n % 2 == 0 && i == n / 2)) {
      buf[i] = cplx(0.0, 0.0);
    } else if (i < (n + 1) / 2) {
      buf[i] *= cplx(0.0, -1.0);
    } else {
      buf[i] *= cplx(0.0, 1.0);
    }
  }
  dft(buf, true);
  rvec out(x.size());
  for (size_t i = 0; i < n; ++i)
    out[static_cast<Eigen::Index>(i)] = buf[i].real() / static_cast<real>(n);
  return out;
}

// Rewrites the imaginary part as the negative Hilbert transform of the real
// part along the bin axis. The first and last bins are left untouched (the
// circular transform is unreliable at the ends of the half-spectrum).
inline SubbandFrame enforce_analyticity(const SubbandFrame& frame) {
  if (!all_finite(frame.bins)) throw shape_error("enforce_analyticity: non-finite frame");
  const Eigen::Index n = frame.bins.size();
  SubbandFrame out = frame;
  if (n < 3) return out;
  rvec re(n);
  for (Eigen::Index i = 0; i < n; ++i) re[i] = frame.bins[i].real();
  const rvec h = hilbert_bins(re);
  for (Eigen::Index i = 1; i + 1 < n; ++i) out.bins[i] = cplx(re[i], -h[i]);
  return out;
}

}  // namespace sbid
