#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbid/common.hpp"
#include "sbid/dependency_map.hpp"
#include "sbid/detector.hpp"
#include "sbid/filterbank.hpp"
#include "sbid/io.hpp"
#include "sbid/lattice.hpp"
#include "sbid/metrics.hpp"
#include "sbid/systems.hpp"

// End-to-end runs: excitation/measurement synthesis (or WAV input), subband
// analysis, dependency detection in the loop, lattice identification,
// residual synthesis, metrics, and artifact emission. Everything is driven by
// one seed so reruns produce byte-identical artifacts.

namespace sbid {

struct RunConfig {
  // filterbank
  std::size_t window_size = 64;  // analysis window, bins = window_size / 2
  std::size_t hop_size = 16;

  // lattice
  int num_stages = 15;
  double transition_a = 0.9999;
  double process_gamma = 1e-6;
  double sigma0 = 1.0;

  // dependency detection
  std::string detector = "coherence";  // "coherence" or a checkpoint path
  Eigen::Index feature_len = 16;       // network time window L
  Eigen::Index feature_window = 256;   // frames of history kept for detection
  double threshold = 0.5;              // network decision threshold
  double coherence_threshold = 0.3;
  Eigen::Index coherence_max_lag = 8;
  int map_refresh = 100;  // frames between detector calls
  bool enforce_analyticity = false;

  // system preset
  std::string preset = "modulation";  // hysteresis | modulation | wav-pair
  double fs = 16000.0;
  double duration_s = 30.0;
  double amplitude = 1.0;
  BoucWenParams bouc_wen;
  double noise_lo = 10.0;  // hysteresis drive band edges, Hz
  double noise_hi = 300.0;
  double rt60_ms = 200.0;
  std::string excitation_wav;
  std::string measurement_wav;

  // detector training runs
  TrainingConfig training;
  Eigen::Index train_examples = 5000;

  std::uint64_t seed = 1;
  std::string output_dir = "run-out";

  void validate() const {
    if (window_size < 2 || window_size % 2 != 0)
      throw config_error("config: window_size must be even and positive");
    if (hop_size == 0 || window_size % hop_size != 0)
      throw config_error("config: hop_size must divide window_size");
    if (num_stages < 1) throw config_error("config: num_stages must be positive");
    if (!(transition_a > 0.0) || transition_a > 1.0)
      throw config_error("config: transition_a must be in (0, 1]");
    if (process_gamma < 0.0) throw config_error("config: process_gamma must be nonnegative");
    if (!(sigma0 > 0.0)) throw config_error("config: sigma0 must be positive");
    if (detector.empty()) throw config_error("config: detector must not be empty");
    if (feature_len < 1) throw config_error("config: feature_len must be positive");
    if (feature_window < feature_len)
      throw config_error("config: feature_window must cover feature_len");
    if (!(threshold > 0.0) || threshold >= 1.0)
      throw config_error("config: threshold must be in (0, 1)");
    if (!(coherence_threshold > 0.0) || coherence_threshold >= 1.0)
      throw config_error("config: coherence_threshold must be in (0, 1)");
    if (coherence_max_lag < 0) throw config_error("config: coherence_max_lag must be nonnegative");
    if (map_refresh < 1) throw config_error("config: map_refresh must be positive");
    if (preset != "hysteresis" && preset != "modulation" && preset != "wav-pair")
      throw config_error("config: unknown preset '" + preset + "'");
    if (!(fs > 0.0)) throw config_error("config: fs must be positive");
    if (!(duration_s > 0.0)) throw config_error("config: duration_s must be positive");
    if (!(amplitude > 0.0)) throw config_error("config: amplitude must be positive");
    if (preset == "hysteresis") {
      if (noise_lo < 0.0 || noise_lo >= noise_hi || noise_hi > fs / 2.0)
        throw config_error("config: hysteresis noise band must satisfy 0 <= lo < hi <= fs/2");
      if (!(rt60_ms > 0.0)) throw config_error("config: rt60_ms must be positive");
    }
    if (preset == "wav-pair" && (excitation_wav.empty() || measurement_wav.empty()))
      throw config_error("config: wav-pair preset needs excitation_wav and measurement_wav");
    if (train_examples < 1) throw config_error("config: train_examples must be positive");
    training.validate();
    if (output_dir.empty()) throw config_error("config: output_dir must not be empty");
  }
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["window_size"] = c.window_size;
  j["hop_size"] = c.hop_size;
  j["num_stages"] = c.num_stages;
  j["transition_a"] = c.transition_a;
  j["process_gamma"] = c.process_gamma;
  j["sigma0"] = c.sigma0;
  j["detector"] = c.detector;
  j["feature_len"] = c.feature_len;
  j["feature_window"] = c.feature_window;
  j["threshold"] = c.threshold;
  j["coherence_threshold"] = c.coherence_threshold;
  j["coherence_max_lag"] = c.coherence_max_lag;
  j["map_refresh"] = c.map_refresh;
  j["enforce_analyticity"] = c.enforce_analyticity;
  j["preset"] = c.preset;
  j["fs"] = c.fs;
  j["duration_s"] = c.duration_s;
  j["amplitude"] = c.amplitude;
  j["bouc_wen"] = {{"alpha", c.bouc_wen.alpha},
                   {"beta", c.bouc_wen.beta},
                   {"zeta", c.bouc_wen.zeta},
                   {"mu", c.bouc_wen.mu}};
  j["noise_lo"] = c.noise_lo;
  j["noise_hi"] = c.noise_hi;
  j["rt60_ms"] = c.rt60_ms;
  j["excitation_wav"] = c.excitation_wav;
  j["measurement_wav"] = c.measurement_wav;
  j["training"] = {{"learn_rate", c.training.learn_rate},
                   {"beta1", c.training.beta1},
                   {"beta2", c.training.beta2},
                   {"epochs", c.training.epochs},
                   {"batch_size", c.training.batch_size},
                   {"density", c.training.density},
                   {"noise", c.training.noise},
                   {"dropout", c.training.dropout}};
  j["train_examples"] = c.train_examples;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "window_size",     "hop_size",       "num_stages",          "transition_a",
      "process_gamma",   "sigma0",         "detector",            "feature_len",
      "feature_window",  "threshold",      "coherence_threshold", "coherence_max_lag",
      "map_refresh",     "enforce_analyticity",                   "preset",
      "fs",              "duration_s",     "amplitude",           "bouc_wen",
      "noise_lo",        "noise_hi",       "rt60_ms",             "excitation_wav",
      "measurement_wav", "training",       "train_examples",      "seed",
      "output_dir"};
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end())
      throw config_error("config: unknown key '" + item.key() + "'");
  }
  RunConfig c;
  c.window_size = j.value("window_size", c.window_size);
  c.hop_size = j.value("hop_size", c.hop_size);
  c.num_stages = j.value("num_stages", c.num_stages);
  c.transition_a = j.value("transition_a", c.transition_a);
  c.process_gamma = j.value("process_gamma", c.process_gamma);
  c.sigma0 = j.value("sigma0", c.sigma0);
  c.detector = j.value("detector", c.detector);
  c.feature_len = j.value("feature_len", c.feature_len);
  c.feature_window = j.value("feature_window", c.feature_window);
  c.threshold = j.value("threshold", c.threshold);
  c.coherence_threshold = j.value("coherence_threshold", c.coherence_threshold);
  c.coherence_max_lag = j.value("coherence_max_lag", c.coherence_max_lag);
  c.map_refresh = j.value("map_refresh", c.map_refresh);
  c.enforce_analyticity = j.value("enforce_analyticity", c.enforce_analyticity);
  c.preset = j.value("preset", c.preset);
  c.fs = j.value("fs", c.fs);
  c.duration_s = j.value("duration_s", c.duration_s);
  c.amplitude = j.value("amplitude", c.amplitude);
  if (j.contains("bouc_wen")) {
    const auto& b = j.at("bouc_wen");
    c.bouc_wen.alpha = b.value("alpha", c.bouc_wen.alpha);
    c.bouc_wen.beta = b.value("beta", c.bouc_wen.beta);
    c.bouc_wen.zeta = b.value("zeta", c.bouc_wen.zeta);
    c.bouc_wen.mu = b.value("mu", c.bouc_wen.mu);
  }
  c.noise_lo = j.value("noise_lo", c.noise_lo);
  c.noise_hi = j.value("noise_hi", c.noise_hi);
  c.rt60_ms = j.value("rt60_ms", c.rt60_ms);
  c.excitation_wav = j.value("excitation_wav", c.excitation_wav);
  c.measurement_wav = j.value("measurement_wav", c.measurement_wav);
  if (j.contains("training")) {
    const auto& t = j.at("training");
    c.training.learn_rate = t.value("learn_rate", c.training.learn_rate);
    c.training.beta1 = t.value("beta1", c.training.beta1);
    c.training.beta2 = t.value("beta2", c.training.beta2);
    c.training.epochs = t.value("epochs", c.training.epochs);
    c.training.batch_size = t.value("batch_size", c.training.batch_size);
    c.training.density = t.value("density", c.training.density);
    c.training.noise = t.value("noise", c.training.noise);
    c.training.dropout = t.value("dropout", c.training.dropout);
  }
  c.train_examples = j.value("train_examples", c.train_examples);
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("config: cannot open " + path);
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw config_error("config: " + path + " is not valid JSON");
  return run_config_from_json(j);
}

// One process per output directory. The lock file is removed on destruction;
// a crash leaves it behind, which the error message tells the user to clear.
class RunLock {
 public:
  explicit RunLock(const std::string& dir) : path_(dir + "/run.lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw io_error("lock: " + path_ + " exists; another run owns this directory or crashed");
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;
  ~RunLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }

 private:
  std::string path_;
  int fd_ = -1;
};

struct Signals {
  std::vector<real> excitation;
  std::vector<real> measurement;
  std::uint32_t sample_rate = 0;
};

inline Signals make_signals(const RunConfig& cfg, rng_t& rng) {
  Signals s;
  if (cfg.preset == "wav-pair") {
    const WavData x = read_wav(cfg.excitation_wav);
    const WavData d = read_wav(cfg.measurement_wav);
    if (x.sample_rate != d.sample_rate)
      throw config_error("wav-pair: sample rates differ between the two files");
    const std::size_t n = std::min(x.samples.size(), d.samples.size());
    s.excitation.assign(x.samples.begin(), x.samples.begin() + static_cast<long>(n));
    s.measurement.assign(d.samples.begin(), d.samples.begin() + static_cast<long>(n));
    s.sample_rate = x.sample_rate;
    return s;
  }
  const auto n = static_cast<Eigen::Index>(cfg.fs * cfg.duration_s);
  if (n < static_cast<Eigen::Index>(cfg.window_size))
    throw config_error("config: run shorter than one analysis window");
  s.sample_rate = static_cast<std::uint32_t>(cfg.fs);
  if (cfg.preset == "modulation") {
    rvec x = cfg.amplitude * randn(rng, n);
    const rvec d = am_modulate(x);
    s.excitation.assign(x.data(), x.data() + n);
    s.measurement.assign(d.data(), d.data() + n);
  } else {  // hysteresis
    rvec x = cfg.amplitude * bandlimited_noise(rng, n, cfg.fs, cfg.noise_lo, cfg.noise_hi);
    const rvec d = hysteresis_pipeline(x, cfg.bouc_wen, cfg.rt60_ms, cfg.fs, rng);
    s.excitation.assign(x.data(), x.data() + n);
    s.measurement.assign(d.data(), d.data() + n);
  }
  return s;
}

struct IdentifyOutcome {
  ErrorReport report;             // delta/erle over the evaluation window
  std::vector<real> residual;     // synthesized residual signal
  std::vector<real> reference;    // measurement, trimmed to the residual length
  std::vector<real> xi2_trace;    // per frame
  std::vector<long> frame_index;  // block index per frame
  DependencyMap detected_map;     // last detector output (initial diagonal if none)
  DependencyMap active_map;       // map the lattice currently runs
  std::size_t frames = 0;
  long copy_events = 0;
  long covariance_resets = 0;
  std::uint32_t sample_rate = 0;
  std::size_t eval_begin = 0, eval_end = 0;
  std::string detector_kind;
  std::size_t detector_params = 0;
};

// Core identification loop, artifact-free. The detector runs every
// map_refresh frames over the trailing feature_window frames of history and
// proposes a map; the lattice adopts it through its shadow mechanism.
inline IdentifyOutcome run_identify(const RunConfig& cfg) {
  cfg.validate();
  rng_t rng(cfg.seed);
  const Signals sig = make_signals(cfg, rng);

  const FilterbankConfig fb = make_filterbank_config(cfg.window_size, cfg.hop_size);
  const WindowPair wp = make_window_pair(fb);
  std::vector<SubbandFrame> xf = analyze(sig.excitation, fb, wp);
  std::vector<SubbandFrame> df = analyze(sig.measurement, fb, wp);
  if (cfg.enforce_analyticity) {
    for (auto& f : xf) f = enforce_analyticity(f);
    for (auto& f : df) f = enforce_analyticity(f);
  }
  const auto bins = static_cast<Eigen::Index>(fb.num_bins);

  std::optional<DetectorNetwork> net;
  if (cfg.detector != "coherence") {
    net = load_detector_file(cfg.detector);
    if (net->bins() != bins || net->len() != cfg.feature_len)
      throw config_error("config: detector checkpoint does not match bins/feature_len");
  }

  LatticeConfig lc;
  lc.num_bins = bins;
  lc.num_stages = cfg.num_stages;
  lc.transition_a = cfg.transition_a;
  lc.process_gamma = cfg.process_gamma;
  lc.sigma0 = cfg.sigma0;
  LatticeFilter lf = init_lattice(lc, DependencyMap::diagonal(bins));

  IdentifyOutcome out;
  out.detected_map = DependencyMap::diagonal(bins);
  out.sample_rate = sig.sample_rate;
  out.detector_kind = net ? "network" : "coherence";
  out.detector_params = net ? net->param_count() : 0;

  std::deque<cvec> xh, dh;
  std::vector<SubbandFrame> residual_frames;
  residual_frames.reserve(xf.size());
  const Eigen::Index min_history = net ? cfg.feature_len : Eigen::Index(64);

  for (std::size_t l = 0; l < xf.size(); ++l) {
    if (l > 0 && l % static_cast<std::size_t>(cfg.map_refresh) == 0 &&
        static_cast<Eigen::Index>(xh.size()) >= min_history) {
      cmat xm(bins, static_cast<Eigen::Index>(xh.size()));
      cmat dm(bins, static_cast<Eigen::Index>(dh.size()));
      for (std::size_t i = 0; i < xh.size(); ++i) {
        xm.col(static_cast<Eigen::Index>(i)) = xh[i];
        dm.col(static_cast<Eigen::Index>(i)) = dh[i];
      }
      const DependencyMap proposal =
          net ? predict_map(*net, xm, dm, cfg.threshold)
              : coherence_detector(xm, dm, cfg.coherence_threshold, cfg.coherence_max_lag);
      lf.apply_map_change(proposal);
      out.detected_map = proposal;
    }

    const FrameResult res = lf.process_frame(xf[l].bins, df[l].bins);
    residual_frames.push_back(SubbandFrame{xf[l].block_index, res.residual});
    out.xi2_trace.push_back(res.xi2);
    out.frame_index.push_back(xf[l].block_index);
    out.report.per_frame.push_back(res.residual.squaredNorm());

    xh.push_back(xf[l].bins);
    dh.push_back(df[l].bins);
    if (static_cast<Eigen::Index>(xh.size()) > cfg.feature_window) {
      xh.pop_front();
      dh.pop_front();
    }
  }

  out.residual = synthesize(residual_frames, fb, wp);
  const std::size_t n = std::min(out.residual.size(), sig.measurement.size());
  out.residual.resize(n);
  out.reference.assign(sig.measurement.begin(), sig.measurement.begin() + static_cast<long>(n));

  // Evaluation window: drop the first quarter (adaptation transient) and one
  // analysis window at each edge (filterbank boundary effects).
  out.eval_begin = std::max(n / 4, cfg.window_size);
  out.eval_end = n > cfg.window_size ? n - cfg.window_size : 0;
  if (out.eval_end <= out.eval_begin)
    throw metric_error("identify: run too short for an evaluation window");
  const auto len = static_cast<Eigen::Index>(out.eval_end - out.eval_begin);
  const Eigen::Map<const rvec> ew(out.residual.data() + out.eval_begin, len);
  const Eigen::Map<const rvec> dw(out.reference.data() + out.eval_begin, len);
  out.report.delta_db = modeling_error_db(ew, dw);
  out.report.erle_db = -out.report.delta_db;

  out.frames = xf.size();
  out.copy_events = lf.copy_events();
  out.covariance_resets = lf.covariance_resets();
  out.active_map = lf.map();
  return out;
}

namespace detail {

inline void write_manifest(const std::string& dir, std::vector<std::string> names) {
  std::sort(names.begin(), names.end());
  nlohmann::json files = nlohmann::json::array();
  for (const auto& name : names) {
    files.push_back({{"name", name},
                     {"bytes", static_cast<std::uint64_t>(
                                   std::filesystem::file_size(dir + "/" + name))}});
  }
  nlohmann::json j;
  j["files"] = files;
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw io_error("manifest: cannot write " + dir + "/manifest.json");
  out << j.dump(2) << '\n';
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw io_error("report: cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace detail

// Identification run with artifacts: residual.wav, error_trace.csv,
// dependency_map.csv (last detector output), report.json, manifest.json.
inline IdentifyOutcome cmd_identify(const RunConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);
  RunLock lock(cfg.output_dir);

  const IdentifyOutcome out = run_identify(cfg);

  write_wav_float32(cfg.output_dir + "/residual.wav", out.residual, out.sample_rate);
  {
    CsvWriter csv(cfg.output_dir + "/error_trace.csv", {"frame", "residual_energy", "xi2"});
    for (std::size_t i = 0; i < out.frames; ++i)
      csv.row({static_cast<real>(out.frame_index[i]), out.report.per_frame[i],
               out.xi2_trace[i]});
  }
  {
    std::ofstream mapcsv(cfg.output_dir + "/dependency_map.csv");
    if (!mapcsv) throw io_error("identify: cannot write dependency_map.csv");
    out.detected_map.to_csv(mapcsv);
  }
  nlohmann::json rep;
  rep["config"] = run_config_to_json(cfg);
  rep["result"] = {{"delta_db", out.report.delta_db},
                   {"erle_db", out.report.erle_db},
                   {"frames", out.frames},
                   {"copy_events", out.copy_events},
                   {"covariance_resets", out.covariance_resets},
                   {"eval_begin", out.eval_begin},
                   {"eval_end", out.eval_end},
                   {"sample_rate", out.sample_rate}};
  rep["detector"] = {{"kind", out.detector_kind}, {"parameters", out.detector_params}};
  detail::write_json_file(cfg.output_dir + "/report.json", rep);
  detail::write_manifest(cfg.output_dir,
                         {"residual.wav", "error_trace.csv", "dependency_map.csv", "report.json"});
  return out;
}

// Emits the preset's excitation/measurement pair for offline use. The
// wav-pair preset re-emits existing files normalized to float32.
inline Signals cmd_simulate(const RunConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);
  RunLock lock(cfg.output_dir);

  rng_t rng(cfg.seed);
  const Signals sig = make_signals(cfg, rng);
  write_wav_float32(cfg.output_dir + "/excitation.wav", sig.excitation, sig.sample_rate);
  write_wav_float32(cfg.output_dir + "/measurement.wav", sig.measurement, sig.sample_rate);

  nlohmann::json rep;
  rep["config"] = run_config_to_json(cfg);
  rep["result"] = {{"samples", sig.excitation.size()}, {"sample_rate", sig.sample_rate}};
  detail::write_json_file(cfg.output_dir + "/report.json", rep);
  detail::write_manifest(cfg.output_dir, {"excitation.wav", "measurement.wav", "report.json"});
  return sig;
}

struct TrainOutcome {
  TrainReport report;
  std::size_t parameters = 0;
  std::string checkpoint_path;
};

// Synthesizes a dataset, trains the detector, and emits detector.ckpt plus a
// per-epoch loss curve. epochs = 0 writes the freshly initialized checkpoint.
inline TrainOutcome cmd_train_detector(const RunConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);
  RunLock lock(cfg.output_dir);

  const auto bins = static_cast<Eigen::Index>(cfg.window_size / 2);
  rng_t data_rng(cfg.seed);
  const auto ds = make_dataset(data_rng, cfg.train_examples, bins, cfg.feature_len,
                               cfg.training.density, cfg.training.noise);
  rng_t net_rng(cfg.seed + 1);
  DetectorNetwork net(bins, cfg.feature_len, net_rng);
  TrainingConfig tc = cfg.training;
  tc.seed = cfg.seed + 2;

  TrainOutcome out;
  out.report = train_detector(net, ds, tc);
  out.parameters = net.param_count();
  out.checkpoint_path = cfg.output_dir + "/detector.ckpt";
  save_detector_file(net, out.checkpoint_path);
  {
    CsvWriter csv(cfg.output_dir + "/loss.csv", {"epoch", "train_bce", "val_bce"});
    for (std::size_t e = 0; e < out.report.train_loss.size(); ++e) {
      const real val = e < out.report.val_loss.size() ? out.report.val_loss[e]
                                                      : std::numeric_limits<real>::quiet_NaN();
      csv.row({static_cast<real>(e), out.report.train_loss[e], val});
    }
  }
  nlohmann::json rep;
  rep["config"] = run_config_to_json(cfg);
  rep["result"] = {{"parameters", out.parameters},
                   {"epochs_run", out.report.train_loss.size()},
                   {"examples", ds.size()}};
  if (!out.report.train_loss.empty()) {
    rep["result"]["final_train_bce"] = out.report.train_loss.back();
    if (!out.report.val_loss.empty()) rep["result"]["final_val_bce"] = out.report.val_loss.back();
  }
  detail::write_json_file(cfg.output_dir + "/report.json", rep);
  detail::write_manifest(cfg.output_dir, {"detector.ckpt", "loss.csv", "report.json"});
  return out;
}

}  // namespace sbid
