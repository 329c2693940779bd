#pragma once

#include <cmath>
#include <limits>

#include "sbid/common.hpp"

namespace sbid {

struct ErrorReport {
  real delta_db = 0.0;
  real erle_db = 0.0;            // always -delta_db
  std::vector<real> per_frame;   // residual energy per frame, filled upstream
};

// Residual-to-reference energy ratio in dB. A perfectly cancelled residual
// returns -inf rather than throwing; a silent reference is a caller bug.
inline real modeling_error_db(const rvec& e, const rvec& y) {
  if (e.size() != y.size()) throw shape_error("modeling_error_db: length mismatch");
  const real ey = y.squaredNorm();
  if (ey == 0.0) throw metric_error("modeling_error_db: reference has zero energy");
  const real ee = e.squaredNorm();
  if (ee == 0.0) return -std::numeric_limits<real>::infinity();
  return 10.0 * std::log10(ee / ey);
}

inline real erle(const rvec& e, const rvec& y) { return -modeling_error_db(e, y); }

inline ErrorReport make_error_report(const rvec& e, const rvec& y) {
  ErrorReport r;
  r.delta_db = modeling_error_db(e, y);
  r.erle_db = -r.delta_db;
  return r;
}

}  // namespace sbid
