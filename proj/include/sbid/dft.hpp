#pragma once

#include <vector>

#include "sbid/common.hpp"

namespace sbid {

inline bool is_power_of_two(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Unnormalized transforms: forward kernel e^{-j2pi km/N}, inverse e^{+j2pi km/N}.
// Callers divide by N where a round trip is intended.

inline void fft_radix2(std::vector<cplx>& a, bool inverse) {
  const size_t n = a.size();
  if (n <= 1) return;
  // Bit-reversal permutation.
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const real ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<real>(len);
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

inline std::vector<cplx> dft_direct(const std::vector<cplx>& a, bool inverse) {
  const size_t n = a.size();
  std::vector<cplx> out(n, cplx(0.0, 0.0));
  const real sign = inverse ? 2.0 : -2.0;
  for (size_t k = 0; k < n; ++k) {
    cplx acc(0.0, 0.0);
    for (size_t m = 0; m < n; ++m) {
      const real ang = sign * M_PI * static_cast<real>(k * m) / static_cast<real>(n);
      acc += a[m] * cplx(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

inline void dft(std::vector<cplx>& a, bool inverse) {
  if (is_power_of_two(a.size())) {
    fft_radix2(a, inverse);
  } else {
    a = dft_direct(a, inverse);
  }
}

}  // namespace sbid
