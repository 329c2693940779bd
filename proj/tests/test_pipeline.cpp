#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sbid/pipeline.hpp"

using namespace sbid;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  const std::string dir = "pipe_out/" + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::map<std::string, std::string> snapshot(const std::string& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::directory_iterator(dir))
    files[entry.path().filename().string()] = read_bytes(entry.path().string());
  return files;
}

// Writes a short noise WAV and returns a config that identifies the file
// against itself. A system that copies its input is the easiest possible
// target, so the residual has to collapse fast.
RunConfig identity_config(const std::string& dir, double seconds = 2.0) {
  rng_t rng(7);
  const auto n = static_cast<Eigen::Index>(16000 * seconds);
  const rvec x = 0.5 * randn(rng, n);
  const std::vector<real> samples(x.data(), x.data() + n);
  write_wav_float32(dir + "/x.wav", samples, 16000);

  RunConfig cfg;
  cfg.preset = "wav-pair";
  cfg.excitation_wav = dir + "/x.wav";
  cfg.measurement_wav = dir + "/x.wav";
  cfg.output_dir = dir + "/run";
  cfg.seed = 11;
  return cfg;
}

nlohmann::json parse_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("identity run collapses the residual") {
  const std::string dir = fresh_dir("identity");
  const RunConfig cfg = identity_config(dir);
  const IdentifyOutcome out = cmd_identify(cfg);

  REQUIRE(out.report.delta_db <= -40.0);
  REQUIRE(out.report.erle_db == -out.report.delta_db);
  REQUIRE(out.frames == out.report.per_frame.size());
  REQUIRE(out.frames == out.xi2_trace.size());
  REQUIRE(out.residual.size() == out.reference.size());
  REQUIRE(out.sample_rate == 16000);
  REQUIRE(out.covariance_resets == 0);
  REQUIRE(out.detector_kind == "coherence");

  for (const char* name :
       {"residual.wav", "error_trace.csv", "dependency_map.csv", "report.json", "manifest.json"})
    REQUIRE(fs::exists(cfg.output_dir + "/" + name));
  REQUIRE_FALSE(fs::exists(cfg.output_dir + "/run.lock"));

  const auto rep = parse_file(cfg.output_dir + "/report.json");
  REQUIRE(rep.at("result").at("delta_db").get<double>() <= -40.0);
  REQUIRE(rep.at("result").at("frames").get<std::size_t>() == out.frames);
  REQUIRE(rep.at("config").at("preset").get<std::string>() == "wav-pair");
  REQUIRE(rep.at("detector").at("kind").get<std::string>() == "coherence");

  // error_trace.csv has one row per frame plus the header.
  std::ifstream trace(cfg.output_dir + "/error_trace.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(trace, line);) ++lines;
  REQUIRE(lines == out.frames + 1);

  const auto man = parse_file(cfg.output_dir + "/manifest.json");
  for (const auto& f : man.at("files")) {
    const std::string name = f.at("name").get<std::string>();
    REQUIRE(fs::file_size(cfg.output_dir + "/" + name) == f.at("bytes").get<std::uint64_t>());
  }
}

TEST_CASE("identify artifacts are byte-identical across reruns") {
  const std::string dir = fresh_dir("rerun");
  const RunConfig cfg = identity_config(dir, 1.0);
  cmd_identify(cfg);
  const auto first = snapshot(cfg.output_dir);
  cmd_identify(cfg);
  const auto second = snapshot(cfg.output_dir);
  REQUIRE(first.size() == 5);
  REQUIRE(first == second);
}

TEST_CASE("run lock excludes concurrent runs on one directory") {
  const std::string dir = fresh_dir("lock");
  const RunConfig cfg = identity_config(dir, 1.0);
  fs::create_directories(cfg.output_dir);
  {
    std::ofstream hold(cfg.output_dir + "/run.lock");
  }
  REQUIRE_THROWS_AS(cmd_identify(cfg), io_error);
  fs::remove(cfg.output_dir + "/run.lock");
  REQUIRE_NOTHROW(cmd_identify(cfg));
  REQUIRE_FALSE(fs::exists(cfg.output_dir + "/run.lock"));
}

TEST_CASE("simulate emits a deterministic signal pair") {
  const std::string dir_a = fresh_dir("sim_a");
  const std::string dir_b = fresh_dir("sim_b");
  for (const char* preset : {"modulation", "hysteresis"}) {
    RunConfig cfg;
    cfg.preset = preset;
    cfg.fs = 2000.0;
    cfg.duration_s = 0.5;
    cfg.amplitude = 0.2;
    cfg.seed = 5;
    cfg.output_dir = dir_a + "/" + preset;
    const Signals sig = cmd_simulate(cfg);
    REQUIRE(sig.excitation.size() == 1000);
    REQUIRE(sig.measurement.size() == 1000);
    cfg.output_dir = dir_b + "/" + preset;
    cmd_simulate(cfg);
    REQUIRE(read_bytes(dir_a + "/" + preset + "/excitation.wav") ==
            read_bytes(dir_b + "/" + preset + "/excitation.wav"));
    REQUIRE(read_bytes(dir_a + "/" + preset + "/measurement.wav") ==
            read_bytes(dir_b + "/" + preset + "/measurement.wav"));
  }
}

TEST_CASE("config validation rejects broken run setups") {
  RunConfig cfg;
  cfg.preset = "wav-pair";
  REQUIRE_THROWS_AS(cfg.validate(), config_error);  // missing paths

  cfg = RunConfig{};
  cfg.preset = "no-such-preset";
  REQUIRE_THROWS_AS(cfg.validate(), config_error);

  cfg = RunConfig{};
  cfg.threshold = 1.5;
  REQUIRE_THROWS_AS(cfg.validate(), config_error);

  cfg = RunConfig{};
  cfg.hop_size = 24;  // does not divide 64
  REQUIRE_THROWS_AS(cfg.validate(), config_error);

  cfg = RunConfig{};
  cfg.preset = "hysteresis";
  cfg.noise_lo = 900.0;
  cfg.noise_hi = 300.0;
  REQUIRE_THROWS_AS(cfg.validate(), config_error);

  cfg = RunConfig{};
  cfg.feature_window = 4;
  cfg.feature_len = 16;
  REQUIRE_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("config json round trip and unknown key rejection") {
  RunConfig cfg;
  cfg.preset = "hysteresis";
  cfg.fs = 2000.0;
  cfg.amplitude = 0.2;
  cfg.bouc_wen.alpha = 0.4;
  cfg.training.epochs = 3;
  cfg.seed = 99;
  const nlohmann::json j = run_config_to_json(cfg);
  const RunConfig back = run_config_from_json(j);
  REQUIRE(run_config_to_json(back).dump() == j.dump());

  nlohmann::json bad = j;
  bad["windowsize"] = 64;
  REQUIRE_THROWS_AS(run_config_from_json(bad), config_error);

  const std::string dir = fresh_dir("cfg");
  {
    std::ofstream out(dir + "/run.json");
    out << j.dump(2) << '\n';
  }
  const RunConfig loaded = load_run_config(dir + "/run.json");
  REQUIRE(run_config_to_json(loaded).dump() == j.dump());
  {
    std::ofstream out(dir + "/broken.json");
    out << "{not json";
  }
  REQUIRE_THROWS_AS(load_run_config(dir + "/broken.json"), config_error);
  REQUIRE_THROWS_AS(load_run_config(dir + "/missing.json"), config_error);
}

TEST_CASE("preset files in the repository parse and validate") {
  for (const char* name : {"modulation", "hysteresis"}) {
    const std::string path = std::string(PRESET_DIR) + "/" + name + ".json";
    const RunConfig cfg = load_run_config(path);
    REQUIRE_NOTHROW(cfg.validate());
    REQUIRE(cfg.preset == name);
    REQUIRE(cfg.window_size == 64);
  }
}

TEST_CASE("train-detector run lowers validation loss and is reproducible") {
  RunConfig cfg;
  cfg.window_size = 16;  // 8 bins keeps this quick
  cfg.feature_len = 8;
  cfg.train_examples = 500;
  cfg.training.epochs = 10;
  cfg.training.learn_rate = 1e-3;
  cfg.training.batch_size = 32;
  cfg.seed = 21;

  cfg.output_dir = fresh_dir("train_a");
  const TrainOutcome out = cmd_train_detector(cfg);
  REQUIRE(out.report.train_loss.size() == 10);
  REQUIRE(out.report.val_loss.size() == 10);
  REQUIRE(out.report.val_loss.back() < 0.8 * out.report.val_loss.front());
  REQUIRE(fs::exists(out.checkpoint_path));

  const DetectorNetwork net = load_detector_file(out.checkpoint_path);
  REQUIRE(net.bins() == 8);
  REQUIRE(net.len() == 8);
  REQUIRE(net.param_count() == out.parameters);

  std::ifstream loss(cfg.output_dir + "/loss.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(loss, line);) ++lines;
  REQUIRE(lines == 11);

  cfg.output_dir = fresh_dir("train_b");
  cmd_train_detector(cfg);
  REQUIRE(read_bytes("pipe_out/train_a/loss.csv") == read_bytes("pipe_out/train_b/loss.csv"));
  REQUIRE(read_bytes("pipe_out/train_a/detector.ckpt") ==
          read_bytes("pipe_out/train_b/detector.ckpt"));
}

TEST_CASE("train-detector with zero epochs writes the initialization") {
  RunConfig cfg;
  cfg.window_size = 16;
  cfg.feature_len = 8;
  cfg.train_examples = 20;
  cfg.training.epochs = 0;
  cfg.seed = 33;
  cfg.output_dir = fresh_dir("train_zero");
  const TrainOutcome out = cmd_train_detector(cfg);
  REQUIRE(out.report.train_loss.empty());

  rng_t net_rng(cfg.seed + 1);
  const DetectorNetwork fresh(8, 8, net_rng);
  const std::string ref_path = cfg.output_dir + "/reference.ckpt";
  save_detector_file(fresh, ref_path);
  REQUIRE(read_bytes(out.checkpoint_path) == read_bytes(ref_path));
}

TEST_CASE("identify can run a trained checkpoint as its detector") {
  const std::string dir = fresh_dir("net_detector");

  RunConfig train_cfg;
  train_cfg.window_size = 16;
  train_cfg.feature_len = 8;
  train_cfg.train_examples = 20;
  train_cfg.training.epochs = 0;
  train_cfg.seed = 41;
  train_cfg.output_dir = dir + "/train";
  const TrainOutcome trained = cmd_train_detector(train_cfg);

  RunConfig cfg = identity_config(dir, 1.0);
  cfg.window_size = 16;
  cfg.hop_size = 4;
  cfg.feature_len = 8;
  cfg.detector = trained.checkpoint_path;
  const IdentifyOutcome out = run_identify(cfg);
  REQUIRE(out.detector_kind == "network");
  REQUIRE(out.detector_params == trained.parameters);
  REQUIRE(out.frames > 0);

  // A checkpoint sized for other bins is rejected up front.
  cfg.window_size = 64;
  cfg.hop_size = 16;
  REQUIRE_THROWS_AS(run_identify(cfg), config_error);
}
