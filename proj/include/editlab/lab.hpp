#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "editlab/config.hpp"
#include "editlab/edit_ops.hpp"
#include "editlab/metrics.hpp"
#include "editlab/theory.hpp"

namespace editlab {

/// Exit codes of every command.
enum ExitCode : int { kExitOk = 0, kExitViolation = 1, kExitConfig = 2 };

/// --threads if given, else LAB_THREADS, else 1.
unsigned resolve_threads(std::optional<unsigned> flag);

Editor make_editor(const ExperimentConfig& cfg);

/// The configured input, or a draw from the source concept keyed by `seed`.
Vector resolve_input(const MixtureModel& model, const InputSpec& input, std::uint64_t seed);

struct VerifyOutcome {
  std::vector<BoundReport> reports;

  bool passed() const;
  nlohmann::json to_json() const;
};

VerifyOutcome run_verify(const ExperimentConfig& cfg, unsigned threads);

struct SweepCell {
  double guidance_scale = 0.0;
  int noise_level = 0;
  std::uint64_t seed = 0;
  MetricReport metrics;
};

struct SweepOutcome {
  std::vector<SweepCell> cells;  // grid order: s, then t0, then seed
  std::vector<double> s_grid;
  std::vector<double> mean_faithfulness;  // per s, over seeds and t0
  std::vector<double> mean_locality_mse;
  double rho_faithfulness = 0.0;
  double rho_locality_mse = 0.0;

  /// Header "s,t0,seed,faithfulness,locality_mse,consistency,quality_nll,identity_drift".
  std::string csv() const;
  nlohmann::json trend_json() const;
};

SweepOutcome run_sweep(const ExperimentConfig& cfg, unsigned threads);

struct EditOutcome {
  Vector x0;
  EditResult result;
  ObjectiveTerms objective;
};

EditOutcome run_edit(const ExperimentConfig& cfg);

struct MultiturnOutcome {
  std::vector<std::uint64_t> seeds;
  std::vector<MultiTurnResult> runs;
  ArtifactThreshold threshold;

  /// Header "seed,turn,faithfulness,consistency,stability,drift,retried,artifact".
  std::string csv() const;
  nlohmann::json to_json() const;
  /// Fraction of runs whose drift increases strictly at every turn.
  double increasing_fraction() const;
  double mean_final_drift() const;
};

MultiturnOutcome run_multiturn(const ExperimentConfig& cfg, unsigned threads);

struct DragOutcome {
  Vector x0;
  DragResult result;
};

DragOutcome run_drag(const ExperimentConfig& cfg);

/// Shared options of the CLI subcommands.
struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::string> profile;
  std::filesystem::path out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

/// Loads the configuration, runs `command` (verify, edit, sweep, multiturn,
/// drag), writes its artifacts under options.out and returns the exit code.
/// Diagnostics go to standard error.
int run_command(const std::string& command, const CommandOptions& options);

}  // namespace editlab
