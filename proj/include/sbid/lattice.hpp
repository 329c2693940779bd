#pragma once

#include <deque>
#include <istream>
#include <memory>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbid/common.hpp"
#include "sbid/dependency_map.hpp"

namespace sbid {

// Cascaded single-tap prediction stages with joint-process estimation. Each
// stage removes one lag of temporal correlation from the subband excitation;
// the joint-process coefficients regress the desired frame on the backward
// errors, which decorrelate across stages and keep the per-frame cost linear
// in the number of stages.
//
// Storage is per output bin: row k_out of each coefficient matrix holds a
// dense vector over that bin's active input set only, with its own
// inverse-Hessian pair. Under a full map every row sees the same regressor
// and the same initial covariance, so the per-row recursion reproduces the
// shared-covariance matrix form exactly.

struct LatticeConfig {
  Eigen::Index num_bins = 32;
  Eigen::Index num_stages = 15;
  real transition_a = 0.9999;
  real process_gamma = 1e-6;
  real sigma0 = 1.0;
  // By default the forward predictor's update is driven by a gain derived
  // from its own regressor (the delayed backward error), which costs a third
  // covariance per row. Setting this flag reuses the joint-process gain (the
  // one derived from the current backward input) instead; in that mode the
  // forward coefficients random-walk multiplicatively and the filter throws a
  // stability error within a few thousand frames. The mode exists for A/B
  // comparison only.
  bool cross_gain_pairing = false;
  // Shadow-filter handover controls.
  real ema_alpha = 0.99;
  real stationarity_tol = 0.10;
  Eigen::Index stationarity_window = 100;
};

inline void validate(const LatticeConfig& c) {
  if (c.num_bins < 1) throw config_error("lattice: num_bins must be >= 1");
  if (c.num_stages < 1) throw config_error("lattice: num_stages must be >= 1");
  if (!(c.sigma0 > 0.0)) throw config_error("lattice: sigma0 must be > 0");
  if (c.process_gamma < 0.0) throw config_error("lattice: gamma must be >= 0");
  if (!(c.transition_a > 0.0) || c.transition_a > 1.0)
    throw config_error("lattice: transition must be in (0, 1]");
  if (!(c.ema_alpha > 0.0) || c.ema_alpha >= 1.0)
    throw config_error("lattice: ema_alpha must be in (0, 1)");
  if (c.stationarity_window < 1) throw config_error("lattice: stationarity window must be >= 1");
}

inline constexpr real kXi2Floor = 1e-10;

// One output bin's slice of a stage: coefficient columns over the bin's
// active input set S, plus the covariances behind the two gains.
struct LatticeRow {
  std::vector<Eigen::Index> support;  // S, ascending input-bin indices
  cvec h_f, h_b, h_j;                 // column k_out of kappa_f / kappa_b / H, restricted to S
  cmat p_f, p_b;                      // inverse Hessians for the f and b regressors
  cmat p_bd;                          // delayed-backward covariance; absent under cross pairing
  long resets = 0;
};

struct LatticeStage {
  std::vector<LatticeRow> rows;  // length num_bins
  cvec delayed_backward;         // the stage's backward input from the previous frame
};

struct FrameResult {
  cvec residual;                 // error after the last stage
  rvec per_stage_error_energy;   // squared norm of each stage's posterior error
  real xi2 = 0.0;                // measurement-noise estimate used this frame
};

namespace detail {

inline void guard_row_cov(cmat& p, real sigma0, long& resets) {
  bool bad = false;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const real d = p(i, i).real();
    if (!(d >= 0.0) || d > 1e6 * sigma0 || !std::isfinite(d)) {
      bad = true;
      break;
    }
  }
  if (bad) {
    p = cmat::Identity(p.rows(), p.cols()) * sigma0;
    ++resets;
  }
}

inline cvec gather(const cvec& v, const std::vector<Eigen::Index>& idx) {
  cvec out(static_cast<Eigen::Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

struct RowGain {
  real eta2 = 0.0;
  cvec k;
};

inline RowGain row_gain(cmat& p, const cvec& reg, real xi2, real a, real sigma0, long& resets) {
  guard_row_cov(p, sigma0, resets);
  RowGain g;
  const cvec pr = p * reg;
  g.eta2 = xi2 + (reg.adjoint() * pr).value().real();
  if (!(g.eta2 > 0.0) || !std::isfinite(g.eta2))
    throw stability_error("lattice: innovation power drifted non-positive");
  g.k = (a / g.eta2) * pr;
  return g;
}

inline void cov_update(cmat& p, const RowGain& g, real a, real gamma) {
  p = (a * a) * p - g.eta2 * (g.k * g.k.adjoint());
  p.diagonal().array() += gamma;
  p = 0.5 * (p + p.adjoint()).eval();
}

}  // namespace detail

struct StageOutputs {
  cvec f, b, e;
};

// Outputs with the stage's current coefficients; no state is touched.
inline StageOutputs stage_outputs(const LatticeStage& st, const cvec& f_in, const cvec& b_in,
                                  const cvec& e_in) {
  const Eigen::Index n = static_cast<Eigen::Index>(st.rows.size());
  StageOutputs out;
  out.f = cvec(n);
  out.b = cvec(n);
  out.e = cvec(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const LatticeRow& row = st.rows[static_cast<size_t>(k)];
    if (row.support.empty()) {
      out.f[k] = f_in[k];
      out.b[k] = st.delayed_backward[k];
      out.e[k] = e_in[k];
      continue;
    }
    const cvec bd_s = detail::gather(st.delayed_backward, row.support);
    const cvec f_s = detail::gather(f_in, row.support);
    const cvec b_s = detail::gather(b_in, row.support);
    out.f[k] = f_in[k] - (row.h_f.adjoint() * bd_s).value();
    out.b[k] = st.delayed_backward[k] - (row.h_b.adjoint() * f_s).value();
    out.e[k] = e_in[k] - (row.h_j.adjoint() * b_s).value();
  }
  return out;
}

// Full stage step: recompute the outputs, then apply the coefficient and
// covariance updates. Gains come first, from the pre-update covariances; the
// delayed-backward buffer advances last.
inline StageOutputs stage_update(LatticeStage& st, const LatticeConfig& cfg, const cvec& f_in,
                                 const cvec& b_in, const cvec& e_in, real xi2) {
  const Eigen::Index n = static_cast<Eigen::Index>(st.rows.size());
  if (f_in.size() != n || b_in.size() != n || e_in.size() != n)
    throw shape_error("lattice: frame size mismatch");
  const real a = cfg.transition_a;
  StageOutputs out = stage_outputs(st, f_in, b_in, e_in);
  for (Eigen::Index k = 0; k < n; ++k) {
    LatticeRow& row = st.rows[static_cast<size_t>(k)];
    if (row.support.empty()) continue;
    const cvec bd_s = detail::gather(st.delayed_backward, row.support);
    const cvec f_s = detail::gather(f_in, row.support);
    const cvec b_s = detail::gather(b_in, row.support);

    const auto gf = detail::row_gain(row.p_f, f_s, xi2, a, cfg.sigma0, row.resets);
    const auto gb = detail::row_gain(row.p_b, b_s, xi2, a, cfg.sigma0, row.resets);
    const cvec* k_for_forward = &gb.k;
    detail::RowGain gbd;
    if (!cfg.cross_gain_pairing) {
      gbd = detail::row_gain(row.p_bd, bd_s, xi2, a, cfg.sigma0, row.resets);
      k_for_forward = &gbd.k;
    }

    row.h_f = a * row.h_f + (*k_for_forward) * std::conj(out.f[k]);
    row.h_b = a * row.h_b + gf.k * std::conj(out.b[k]);
    row.h_j = a * row.h_j + gb.k * std::conj(out.e[k]);

    detail::cov_update(row.p_f, gf, a, cfg.process_gamma);
    detail::cov_update(row.p_b, gb, a, cfg.process_gamma);
    if (!cfg.cross_gain_pairing) detail::cov_update(row.p_bd, gbd, a, cfg.process_gamma);
  }
  st.delayed_backward = b_in;
  return out;
}

class LatticeFilter {
 public:
  LatticeFilter(const LatticeConfig& cfg, const DependencyMap& map) : cfg_(cfg), map_(map) {
    validate(cfg_);
    if (map_.n != cfg_.num_bins) throw config_error("lattice: map size must equal num_bins");
    stages_.assign(static_cast<size_t>(cfg_.num_stages), make_stage());
  }

  const LatticeConfig& config() const { return cfg_; }
  const DependencyMap& map() const { return map_; }
  const LatticeStage& stage(Eigen::Index m) const { return stages_[static_cast<size_t>(m)]; }
  Eigen::Index num_stages() const { return static_cast<Eigen::Index>(stages_.size()); }
  long frame_count() const { return frames_; }
  long copy_events() const { return copies_; }
  long last_copy_frame() const { return last_copy_frame_; }
  bool shadow_active() const { return shadow_ != nullptr; }
  long covariance_resets() const {
    long total = 0;
    for (const auto& st : stages_)
      for (const auto& row : st.rows) total += row.resets;
    return total;
  }

  // Noise estimate for the frame about to be processed: mean posterior error
  // energy across stages, with current coefficients and delay buffers.
  real estimate_measurement_noise(const cvec& x, const cvec& d) const {
    check_frame(x, d);
    cvec f = x, b = x, e = d;
    real acc = 0.0;
    for (const auto& st : stages_) {
      const StageOutputs out = stage_outputs(st, f, b, e);
      acc += out.e.squaredNorm();
      f = out.f;
      b = out.b;
      e = out.e;
    }
    return std::max(acc / static_cast<real>(stages_.size()), kXi2Floor);
  }

  FrameResult process_frame(const cvec& x, const cvec& d) {
    FrameResult res = process_frame_core(x, d);
    const real energy = res.residual.squaredNorm();
    step_ema(primary_ema_, primary_ema_init_, energy);
    step_ema(xi2_ema_, xi2_ema_init_, res.xi2);
    xi2_hist_.push_back(xi2_ema_);
    if (static_cast<Eigen::Index>(xi2_hist_.size()) > cfg_.stationarity_window + 1)
      xi2_hist_.pop_front();

    if (shadow_) {
      const FrameResult sres = shadow_->process_frame_core(x, d);
      step_ema(shadow_ema_, shadow_ema_init_, sres.residual.squaredNorm());
      ++shadow_age_;
      if (shadow_age_ >= cfg_.stationarity_window && shadow_ema_ < primary_ema_ && stationary()) {
        stages_ = std::move(shadow_->stages_);
        map_ = shadow_->map_;
        primary_ema_ = shadow_ema_;
        shadow_.reset();
        ++copies_;
        last_copy_frame_ = frames_;
      }
    }
    ++frames_;
    return res;
  }

  // Structure changes run behind a shadow filter first: the new map must earn
  // the handover by beating the primary's smoothed residual during a
  // stationary stretch. Re-announcing the active or already-shadowed map is a
  // no-op so a periodic detector does not keep resetting the candidate.
  void apply_map_change(const DependencyMap& new_map) {
    if (new_map.n != cfg_.num_bins) throw shape_error("lattice: map size mismatch");
    if (new_map == map_) return;
    if (shadow_ && shadow_->map_ == new_map) return;
    shadow_ = std::make_unique<LatticeFilter>(cfg_, new_map);
    shadow_ema_ = primary_ema_;
    shadow_ema_init_ = primary_ema_init_;
    shadow_age_ = 0;
  }

  // Dense views of one stage's coefficient matrices (column k_out holds the
  // row's coefficients, so M^H applied to a frame matches the row outputs).
  cmat dense_kappa_f(Eigen::Index m) const { return dense(m, &LatticeRow::h_f); }
  cmat dense_kappa_b(Eigen::Index m) const { return dense(m, &LatticeRow::h_b); }
  cmat dense_joint(Eigen::Index m) const { return dense(m, &LatticeRow::h_j); }

  // Checkpoint: JSON header (config, map, counters) then flat little-endian
  // complex payload. The shadow is transient and is not persisted.
  void save(std::ostream& out) const {
    nlohmann::json h;
    h["num_bins"] = cfg_.num_bins;
    h["num_stages"] = cfg_.num_stages;
    h["transition_a"] = cfg_.transition_a;
    h["process_gamma"] = cfg_.process_gamma;
    h["sigma0"] = cfg_.sigma0;
    h["cross_gain_pairing"] = cfg_.cross_gain_pairing;
    h["ema_alpha"] = cfg_.ema_alpha;
    h["stationarity_tol"] = cfg_.stationarity_tol;
    h["stationarity_window"] = cfg_.stationarity_window;
    h["map"] = map_.to_row_strings();
    h["frames"] = frames_;
    h["copies"] = copies_;
    h["last_copy_frame"] = last_copy_frame_;
    h["primary_ema"] = primary_ema_;
    h["primary_ema_init"] = primary_ema_init_;
    h["xi2_ema"] = xi2_ema_;
    h["xi2_ema_init"] = xi2_ema_init_;
    const std::string hs = h.dump();
    const uint32_t hlen = static_cast<uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& st : stages_) {
      for (const auto& row : st.rows) {
        write_cvec(out, row.h_f);
        write_cvec(out, row.h_b);
        write_cvec(out, row.h_j);
        write_cmat(out, row.p_f);
        write_cmat(out, row.p_b);
        if (!cfg_.cross_gain_pairing) write_cmat(out, row.p_bd);
        const real r = static_cast<real>(row.resets);
        out.write(reinterpret_cast<const char*>(&r), 8);
      }
      write_cvec(out, st.delayed_backward);
    }
  }

  static LatticeFilter load(std::istream& in) {
    uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 4);
    if (!in || hlen == 0 || hlen > (1u << 24)) throw io_error("lattice: bad checkpoint header");
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw io_error("lattice: truncated checkpoint header");
    nlohmann::json h = nlohmann::json::parse(hs, nullptr, false);
    if (h.is_discarded()) throw io_error("lattice: checkpoint header is not valid JSON");
    LatticeConfig cfg;
    cfg.num_bins = h.at("num_bins").get<Eigen::Index>();
    cfg.num_stages = h.at("num_stages").get<Eigen::Index>();
    cfg.transition_a = h.at("transition_a").get<real>();
    cfg.process_gamma = h.at("process_gamma").get<real>();
    cfg.sigma0 = h.at("sigma0").get<real>();
    cfg.cross_gain_pairing = h.at("cross_gain_pairing").get<bool>();
    cfg.ema_alpha = h.at("ema_alpha").get<real>();
    cfg.stationarity_tol = h.at("stationarity_tol").get<real>();
    cfg.stationarity_window = h.at("stationarity_window").get<Eigen::Index>();
    const auto rows = h.at("map").get<std::vector<std::string>>();
    LatticeFilter lf(cfg, DependencyMap::from_row_strings(rows));
    lf.frames_ = h.at("frames").get<long>();
    lf.copies_ = h.at("copies").get<long>();
    lf.last_copy_frame_ = h.at("last_copy_frame").get<long>();
    lf.primary_ema_ = h.at("primary_ema").get<real>();
    lf.primary_ema_init_ = h.at("primary_ema_init").get<bool>();
    lf.xi2_ema_ = h.at("xi2_ema").get<real>();
    lf.xi2_ema_init_ = h.at("xi2_ema_init").get<bool>();
    for (auto& st : lf.stages_) {
      for (auto& row : st.rows) {
        read_cvec(in, row.h_f);
        read_cvec(in, row.h_b);
        read_cvec(in, row.h_j);
        read_cmat(in, row.p_f);
        read_cmat(in, row.p_b);
        if (!cfg.cross_gain_pairing) read_cmat(in, row.p_bd);
        real r = 0.0;
        in.read(reinterpret_cast<char*>(&r), 8);
        row.resets = static_cast<long>(r);
      }
      read_cvec(in, st.delayed_backward);
    }
    if (!in) throw io_error("lattice: truncated checkpoint payload");
    return lf;
  }

 private:
  LatticeStage make_stage() const {
    LatticeStage st;
    st.rows.resize(static_cast<size_t>(cfg_.num_bins));
    for (Eigen::Index k = 0; k < cfg_.num_bins; ++k) {
      LatticeRow& row = st.rows[static_cast<size_t>(k)];
      row.support = map_.row_support(k);
      const Eigen::Index s = static_cast<Eigen::Index>(row.support.size());
      row.h_f = cvec::Zero(s);
      row.h_b = cvec::Zero(s);
      row.h_j = cvec::Zero(s);
      row.p_f = cmat::Identity(s, s) * cfg_.sigma0;
      row.p_b = cmat::Identity(s, s) * cfg_.sigma0;
      if (!cfg_.cross_gain_pairing) row.p_bd = cmat::Identity(s, s) * cfg_.sigma0;
    }
    st.delayed_backward = cvec::Zero(cfg_.num_bins);
    return st;
  }

  void check_frame(const cvec& x, const cvec& d) const {
    if (x.size() != cfg_.num_bins || d.size() != cfg_.num_bins)
      throw shape_error("lattice: frame size mismatch");
  }

  FrameResult process_frame_core(const cvec& x, const cvec& d) {
    check_frame(x, d);
    const real xi2 = estimate_measurement_noise(x, d);
    FrameResult res;
    res.xi2 = xi2;
    res.per_stage_error_energy = rvec(num_stages());
    cvec f = x, b = x, e = d;
    for (Eigen::Index m = 0; m < num_stages(); ++m) {
      const StageOutputs out = stage_update(stages_[static_cast<size_t>(m)], cfg_, f, b, e, xi2);
      res.per_stage_error_energy[m] = out.e.squaredNorm();
      f = out.f;
      b = out.b;
      e = out.e;
    }
    res.residual = e;
    return res;
  }

  void step_ema(real& ema, bool& init, real value) const {
    if (!init) {
      ema = value;
      init = true;
    } else {
      ema = cfg_.ema_alpha * ema + (1.0 - cfg_.ema_alpha) * value;
    }
  }

  bool stationary() const {
    if (static_cast<Eigen::Index>(xi2_hist_.size()) <= cfg_.stationarity_window) return false;
    const real then = xi2_hist_.front(), now = xi2_hist_.back();
    return std::fabs(now - then) / std::max(then, 1e-12) < cfg_.stationarity_tol;
  }

  cmat dense(Eigen::Index m, cvec LatticeRow::*field) const {
    cmat out = cmat::Zero(cfg_.num_bins, cfg_.num_bins);
    const LatticeStage& st = stages_[static_cast<size_t>(m)];
    for (Eigen::Index k = 0; k < cfg_.num_bins; ++k) {
      const LatticeRow& row = st.rows[static_cast<size_t>(k)];
      for (size_t j = 0; j < row.support.size(); ++j)
        out(row.support[j], k) = (row.*field)[static_cast<Eigen::Index>(j)];
    }
    return out;
  }

  static void write_cvec(std::ostream& out, const cvec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const real re = v[i].real(), im = v[i].imag();
      out.write(reinterpret_cast<const char*>(&re), 8);
      out.write(reinterpret_cast<const char*>(&im), 8);
    }
  }
  static void write_cmat(std::ostream& out, const cmat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const real re = m(r, c).real(), im = m(r, c).imag();
        out.write(reinterpret_cast<const char*>(&re), 8);
        out.write(reinterpret_cast<const char*>(&im), 8);
      }
  }
  static void read_cvec(std::istream& in, cvec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      real re = 0.0, im = 0.0;
      in.read(reinterpret_cast<char*>(&re), 8);
      in.read(reinterpret_cast<char*>(&im), 8);
      v[i] = cplx(re, im);
    }
  }
  static void read_cmat(std::istream& in, cmat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        real re = 0.0, im = 0.0;
        in.read(reinterpret_cast<char*>(&re), 8);
        in.read(reinterpret_cast<char*>(&im), 8);
        m(r, c) = cplx(re, im);
      }
  }

  LatticeConfig cfg_;
  DependencyMap map_;
  std::vector<LatticeStage> stages_;
  std::unique_ptr<LatticeFilter> shadow_;
  real primary_ema_ = 0.0;
  bool primary_ema_init_ = false;
  real shadow_ema_ = 0.0;
  bool shadow_ema_init_ = false;
  long shadow_age_ = 0;
  real xi2_ema_ = 0.0;
  bool xi2_ema_init_ = false;
  std::deque<real> xi2_hist_;
  long frames_ = 0;
  long copies_ = 0;
  long last_copy_frame_ = -1;
};

inline LatticeFilter init_lattice(const LatticeConfig& cfg, const DependencyMap& map) {
  return LatticeFilter(cfg, map);
}

}  // namespace sbid
