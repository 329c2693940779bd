#pragma once

#include <fstream>
#include <string>

#include "sbid/common.hpp"

namespace sbid {

// Covariance-form adaptive filter for one MISO output bin. The state carries
// the inverse-Hessian matrix directly; the transition is the scalar-diagonal
// slow-drift model a*I and the process noise defaults to gamma*I but the
// update accepts a general Hermitian matrix.

struct MisoKalmanState {
  cvec h;             // stacked coefficients over the active regressor order
  cmat inv_hessian;   // Hermitian, diag real >= 0
  real transition_a = 0.9999;
  real process_gamma = 1e-6;
  cmat process_noise;  // optional general Hermitian; empty means gamma*I
  real xi2 = 1.0;      // measurement-noise power, shared across bins upstream
  real sigma0 = 1.0;   // initial inverse-Hessian scale, reused by the reset guard
  long resets = 0;
};

inline constexpr real kXiFloor = 1e-10;

inline MisoKalmanState init_state(Eigen::Index dim, real sigma0, real gamma, real xi0, real a) {
  if (dim < 1) throw config_error("kalman: dim must be >= 1");
  if (sigma0 <= 0.0) throw config_error("kalman: sigma0 must be > 0");
  if (gamma < 0.0) throw config_error("kalman: gamma must be >= 0");
  if (xi0 <= 0.0) throw config_error("kalman: xi0 must be > 0");
  if (a <= 0.0 || a > 1.0) throw config_error("kalman: a must be in (0, 1]");
  MisoKalmanState s;
  s.h = cvec::Zero(dim);
  s.inv_hessian = cmat::Identity(dim, dim) * sigma0;
  s.transition_a = a;
  s.process_gamma = gamma;
  s.xi2 = std::max(xi0, kXiFloor);
  s.sigma0 = sigma0;
  return s;
}

// Covariance drift guard: reset the inverse Hessian but keep the coefficients.
inline void guard_covariance(MisoKalmanState& s) {
  bool bad = false;
  for (Eigen::Index i = 0; i < s.inv_hessian.rows(); ++i) {
    const real d = s.inv_hessian(i, i).real();
    if (!(d >= 0.0) || d > 1e6 * s.sigma0 || !std::isfinite(d)) {
      bad = true;
      break;
    }
  }
  if (bad) {
    s.inv_hessian = cmat::Identity(s.inv_hessian.rows(), s.inv_hessian.cols()) * s.sigma0;
    ++s.resets;
  }
}

inline cplx predict(const MisoKalmanState& s, const cvec& x) {
  if (x.size() != s.h.size()) throw shape_error("kalman: regressor size mismatch");
  return (s.h.adjoint() * x).value();
}

// One update step. Returns the prior error e = d - h^H x; the coefficient
// update consumes its conjugate.
inline cplx kalman_update(MisoKalmanState& s, const cvec& x, cplx d) {
  if (x.size() != s.h.size()) throw shape_error("kalman: regressor size mismatch");
  guard_covariance(s);
  const real a = s.transition_a;

  const cvec px = s.inv_hessian * x;
  const real eta2 = s.xi2 + (x.adjoint() * px).value().real();
  if (!(eta2 > 0.0) || !std::isfinite(eta2))
    throw stability_error("kalman: eta^2 drifted non-positive");

  const cvec k = (a / eta2) * px;
  const cplx e = d - (s.h.adjoint() * x).value();
  s.h = a * s.h + k * std::conj(e);
  if (s.process_noise.size() == 0) {
    s.inv_hessian = (a * a) * s.inv_hessian - eta2 * (k * k.adjoint());
    s.inv_hessian.diagonal().array() += s.process_gamma;
  } else {
    s.inv_hessian = (a * a) * s.inv_hessian + s.process_noise - eta2 * (k * k.adjoint());
  }
  s.inv_hessian = 0.5 * (s.inv_hessian + s.inv_hessian.adjoint()).eval();
  return e;
}

// Flat little-endian checkpoint: dim, scalars, then h and the row-major
// inverse Hessian as interleaved (re, im) doubles.
inline void save_state(const MisoKalmanState& s, std::ostream& out) {
  const uint64_t dim = static_cast<uint64_t>(s.h.size());
  out.write(reinterpret_cast<const char*>(&dim), 8);
  const real scalars[5] = {s.transition_a, s.process_gamma, s.xi2, s.sigma0,
                           static_cast<real>(s.resets)};
  out.write(reinterpret_cast<const char*>(scalars), sizeof(scalars));
  for (Eigen::Index i = 0; i < s.h.size(); ++i) {
    const real re = s.h[i].real(), im = s.h[i].imag();
    out.write(reinterpret_cast<const char*>(&re), 8);
    out.write(reinterpret_cast<const char*>(&im), 8);
  }
  for (Eigen::Index r = 0; r < s.inv_hessian.rows(); ++r) {
    for (Eigen::Index c = 0; c < s.inv_hessian.cols(); ++c) {
      const real re = s.inv_hessian(r, c).real(), im = s.inv_hessian(r, c).imag();
      out.write(reinterpret_cast<const char*>(&re), 8);
      out.write(reinterpret_cast<const char*>(&im), 8);
    }
  }
}

inline MisoKalmanState load_state(std::istream& in) {
  uint64_t dim = 0;
  in.read(reinterpret_cast<char*>(&dim), 8);
  if (!in || dim == 0) throw io_error("kalman: bad checkpoint header");
  real scalars[5];
  in.read(reinterpret_cast<char*>(scalars), sizeof(scalars));
  MisoKalmanState s;
  s.transition_a = scalars[0];
  s.process_gamma = scalars[1];
  s.xi2 = scalars[2];
  s.sigma0 = scalars[3];
  s.resets = static_cast<long>(scalars[4]);
  const Eigen::Index n = static_cast<Eigen::Index>(dim);
  s.h = cvec(n);
  s.inv_hessian = cmat(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    real re, im;
    in.read(reinterpret_cast<char*>(&re), 8);
    in.read(reinterpret_cast<char*>(&im), 8);
    s.h[i] = cplx(re, im);
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) {
      real re, im;
      in.read(reinterpret_cast<char*>(&re), 8);
      in.read(reinterpret_cast<char*>(&im), 8);
      s.inv_hessian(r, c) = cplx(re, im);
    }
  }
  if (!in) throw io_error("kalman: truncated checkpoint");
  return s;
}

}  // namespace sbid
