// Command-line front end: identify / simulate / train-detector, each taking a
// JSON config plus a handful of overrides. Exit codes: 0 success, 2 bad
// configuration or arguments, 3 runtime failure.

#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "sbid/pipeline.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::string output_dir;
  std::string preset;
  std::string detector;
  std::string excitation;
  std::string measurement;
  std::uint64_t seed = 0;
  double duration_s = 0.0;
  int epochs = 0;
  long examples = 0;
};

void add_common(CLI::App* sc, Overrides& ov) {
  sc->add_option("--config", ov.config_path, "JSON run configuration");
  sc->add_option("--seed", ov.seed, "override the run seed");
  sc->add_option("--output-dir", ov.output_dir, "override the artifact directory");
}

void apply_common(const CLI::App* sc, const Overrides& ov, sbid::RunConfig& cfg) {
  if (sc->count("--seed")) cfg.seed = ov.seed;
  if (sc->count("--output-dir")) cfg.output_dir = ov.output_dir;
}

sbid::RunConfig base_config(const Overrides& ov) {
  return ov.config_path.empty() ? sbid::RunConfig{} : sbid::load_run_config(ov.config_path);
}

}  // namespace

int main(int argc, char** argv) {
  // The WAV and checkpoint writers assume a little-endian host.
  const std::uint16_t probe = 1;
  if (*reinterpret_cast<const std::uint8_t*>(&probe) != 1) {
    std::fprintf(stderr, "error: this tool requires a little-endian host\n");
    return 3;
  }

  CLI::App app{"subband-domain identification of nonlinear systems"};
  app.require_subcommand(1);
  Overrides ov;

  CLI::App* identify = app.add_subcommand("identify", "run online identification");
  add_common(identify, ov);
  identify->add_option("--preset", ov.preset, "hysteresis | modulation | wav-pair");
  identify->add_option("--duration", ov.duration_s, "run length in seconds");
  identify->add_option("--detector", ov.detector, "'coherence' or a checkpoint path");
  identify->add_option("--excitation", ov.excitation, "excitation WAV (wav-pair preset)");
  identify->add_option("--measurement", ov.measurement, "measurement WAV (wav-pair preset)");

  CLI::App* simulate = app.add_subcommand("simulate", "emit a preset's signal pair");
  add_common(simulate, ov);
  simulate->add_option("--preset", ov.preset, "hysteresis | modulation | wav-pair");
  simulate->add_option("--duration", ov.duration_s, "run length in seconds");
  simulate->add_option("--excitation", ov.excitation, "excitation WAV (wav-pair preset)");
  simulate->add_option("--measurement", ov.measurement, "measurement WAV (wav-pair preset)");

  CLI::App* train = app.add_subcommand("train-detector", "train the dependency detector");
  add_common(train, ov);
  train->add_option("--epochs", ov.epochs, "training epochs");
  train->add_option("--examples", ov.examples, "synthetic dataset size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "argument error: %s\n", e.what());
    return 2;
  }

  try {
    sbid::RunConfig cfg = base_config(ov);
    if (identify->parsed()) {
      apply_common(identify, ov, cfg);
      if (identify->count("--preset")) cfg.preset = ov.preset;
      if (identify->count("--duration")) cfg.duration_s = ov.duration_s;
      if (identify->count("--detector")) cfg.detector = ov.detector;
      if (identify->count("--excitation")) cfg.excitation_wav = ov.excitation;
      if (identify->count("--measurement")) cfg.measurement_wav = ov.measurement;
      const sbid::IdentifyOutcome out = sbid::cmd_identify(cfg);
      std::printf("preset=%s frames=%zu delta=%.2f dB erle=%.2f dB copies=%ld resets=%ld\n",
                  cfg.preset.c_str(), out.frames, out.report.delta_db, out.report.erle_db,
                  out.copy_events, out.covariance_resets);
      std::printf("artifacts: %s\n", cfg.output_dir.c_str());
    } else if (simulate->parsed()) {
      apply_common(simulate, ov, cfg);
      if (simulate->count("--preset")) cfg.preset = ov.preset;
      if (simulate->count("--duration")) cfg.duration_s = ov.duration_s;
      if (simulate->count("--excitation")) cfg.excitation_wav = ov.excitation;
      if (simulate->count("--measurement")) cfg.measurement_wav = ov.measurement;
      const sbid::Signals sig = sbid::cmd_simulate(cfg);
      std::printf("preset=%s samples=%zu rate=%u\n", cfg.preset.c_str(),
                  sig.excitation.size(), sig.sample_rate);
      std::printf("artifacts: %s\n", cfg.output_dir.c_str());
    } else {
      apply_common(train, ov, cfg);
      if (train->count("--epochs")) cfg.training.epochs = ov.epochs;
      if (train->count("--examples")) cfg.train_examples = ov.examples;
      const sbid::TrainOutcome out = sbid::cmd_train_detector(cfg);
      if (out.report.train_loss.empty()) {
        std::printf("parameters=%zu epochs=0 (checkpoint is the initialization)\n",
                    out.parameters);
      } else {
        std::printf("parameters=%zu epochs=%zu train_bce=%.4f val_bce=%.4f\n", out.parameters,
                    out.report.train_loss.size(), out.report.train_loss.back(),
                    out.report.val_loss.empty() ? 0.0 : out.report.val_loss.back());
      }
      std::printf("checkpoint: %s\n", out.checkpoint_path.c_str());
    }
    return 0;
  } catch (const sbid::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
