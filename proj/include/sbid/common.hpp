#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sbid {

using real = double;
using cplx = std::complex<double>;
using cvec = Eigen::VectorXcd;
using cmat = Eigen::MatrixXcd;
using rvec = Eigen::VectorXd;
using rmat = Eigen::MatrixXd;

// Error taxonomy. The CLI maps config_error to exit code 2 and every other
// failure to exit code 3, so keep new error types under one of these roots.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct stability_error : std::runtime_error {
  explicit stability_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct metric_error : std::runtime_error {
  explicit metric_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct needs_more_data : std::runtime_error {
  explicit needs_more_data(const std::string& msg) : std::runtime_error(msg) {}
};

struct training_error : std::runtime_error {
  explicit training_error(const std::string& msg) : std::runtime_error(msg) {}
};

using rng_t = std::mt19937_64;

// Gaussian draws via explicit Box-Muller instead of std::normal_distribution:
// the standard leaves that distribution's algorithm unspecified, and run
// artifacts must reproduce bit-identically across toolchains for one seed.
class Gaussian {
 public:
  real operator()(rng_t& rng) {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    real u1 = 0.0;
    do {
      u1 = uniform01(rng);
    } while (u1 <= 1e-300);
    const real u2 = uniform01(rng);
    const real r = std::sqrt(-2.0 * std::log(u1));
    const real th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  static real uniform01(rng_t& rng) {
    // 53-bit mantissa fill; uniform in [0, 1).
    return static_cast<real>(rng() >> 11) * 0x1.0p-53;
  }

 private:
  bool have_spare_ = false;
  real spare_ = 0.0;
};

inline real randn(rng_t& rng) {
  Gaussian g;
  return g(rng);
}

// Circularly-symmetric unit-variance complex Gaussian.
inline cplx crandn(rng_t& rng) {
  Gaussian g;
  const real re = g(rng);
  const real im = g(rng);
  return cplx(re, im) / std::sqrt(2.0);
}

inline rvec randn(rng_t& rng, Eigen::Index n) {
  Gaussian g;
  rvec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

inline cvec crandn(rng_t& rng, Eigen::Index n) {
  cvec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = crandn(rng);
  return v;
}

inline bool all_finite(const cvec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i].real()) || !std::isfinite(v[i].imag())) return false;
  }
  return true;
}

}  // namespace sbid
