#pragma once

#include <algorithm>
#include <cmath>

#include "sbid/common.hpp"
#include "sbid/dft.hpp"

namespace sbid {

// Reference systems the identification experiments run against. Everything
// here is deterministic under a caller-supplied rng.

struct BoucWenParams {
  real alpha = 0.3;
  real beta = 1.0;
  real zeta = 0.5;
  real mu = 0.5;
};

struct BoucWenState {
  real s = 0.0;
  real u_prev = 0.0;
};

// Forward-Euler hysteresis step; returns the displacement output.
inline real bouc_wen_step(BoucWenState& st, const BoucWenParams& p, real u) {
  const real du = u - st.u_prev;
  const real s_next = st.s + p.alpha * du - p.zeta * std::fabs(st.s) * du - p.beta * std::fabs(du) * st.s;
  st.s = s_next;
  st.u_prev = u;
  return p.mu * u - s_next;
}

inline rvec bouc_wen_run(const BoucWenParams& p, const rvec& u) {
  BoucWenState st;
  rvec d(u.size());
  for (Eigen::Index n = 0; n < u.size(); ++n) d[n] = bouc_wen_step(st, p, u[n]);
  return d;
}

// Multiply by sin(pi*n/2); the factor cycles 0, 1, 0, -1 exactly.
inline rvec am_modulate(const rvec& x) {
  rvec y(x.size());
  for (Eigen::Index n = 0; n < x.size(); ++n) {
    switch (n % 4) {
      case 0: y[n] = 0.0; break;
      case 1: y[n] = x[n]; break;
      case 2: y[n] = 0.0; break;
      default: y[n] = -x[n]; break;
    }
  }
  return y;
}

// Exponentially decaying white-noise impulse response. The decay constant is
// chosen so the ideal energy envelope falls 60 dB at rt60; the 1.4x length
// keeps the truncation tail from biasing the Schroeder curve near -60 dB.
inline rvec synth_reverb_ir(real rt60_ms, real fs, rng_t& rng) {
  if (!(rt60_ms > 0.0) || !(fs > 0.0)) throw config_error("synth_reverb_ir: rt60 and fs must be > 0");
  const real rt60 = rt60_ms * 1e-3;
  const real tau = rt60 / 6.907755278982137;  // ln(10^3)
  const Eigen::Index len = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::ceil(1.4 * rt60 * fs)));
  Gaussian g;
  rvec ir(len);
  for (Eigen::Index n = 0; n < len; ++n) ir[n] = g(rng) * std::exp(-static_cast<real>(n) / (fs * tau));
  return ir;
}

// Full-length direct convolution.
inline rvec fir_filter(const rvec& x, const rvec& ir) {
  if (ir.size() == 0) throw config_error("fir_filter: empty impulse response");
  rvec y = rvec::Zero(x.size() + ir.size() - 1);
  for (Eigen::Index n = 0; n < y.size(); ++n) {
    const Eigen::Index k_lo = std::max<Eigen::Index>(0, n - x.size() + 1);
    const Eigen::Index k_hi = std::min<Eigen::Index>(ir.size() - 1, n);
    real acc = 0.0;
    for (Eigen::Index k = k_lo; k <= k_hi; ++k) acc += ir[k] * x[n - k];
    y[n] = acc;
  }
  return y;
}

// Hysteresis into a synthetic room: Bouc-Wen then the decaying-noise channel,
// trimmed back to the excitation length.
inline rvec hysteresis_pipeline(const rvec& x, const BoucWenParams& p, real rt60_ms, real fs, rng_t& rng) {
  const rvec d = bouc_wen_run(p, x);
  const rvec ir = synth_reverb_ir(rt60_ms, fs, rng);
  return fir_filter(d, ir).head(x.size());
}

// Gaussian noise confined to [f_lo, f_hi] Hz, scaled to unit sample variance.
// Synthesized by masking the spectrum of a white draw over the next power of
// two, so out-of-band energy is exactly zero when n itself is a power of two.
inline rvec bandlimited_noise(rng_t& rng, Eigen::Index n, real fs, real f_lo, real f_hi) {
  if (n < 1) throw config_error("bandlimited_noise: n must be >= 1");
  if (!(f_lo >= 0.0) || !(f_lo < f_hi) || !(f_hi <= fs / 2.0))
    throw config_error("bandlimited_noise: need 0 <= f_lo < f_hi <= fs/2");
  Eigen::Index nfft = 1;
  while (nfft < n) nfft <<= 1;
  std::vector<cplx> spec(nfft);
  Gaussian g;
  for (Eigen::Index i = 0; i < nfft; ++i) spec[i] = cplx(g(rng), 0.0);
  fft_radix2(spec, false);
  for (Eigen::Index k = 0; k <= nfft / 2; ++k) {
    const real f = static_cast<real>(k) * fs / static_cast<real>(nfft);
    if (f < f_lo || f > f_hi) {
      spec[k] = cplx(0.0, 0.0);
      if (k > 0 && k < nfft) spec[(nfft - k) % nfft] = cplx(0.0, 0.0);
    }
  }
  fft_radix2(spec, true);
  rvec out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = spec[i].real() / static_cast<real>(nfft);
  const real sd = std::sqrt(out.squaredNorm() / static_cast<real>(n));
  if (sd > 0.0) out /= sd;
  return out;
}

}  // namespace sbid
