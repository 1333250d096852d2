#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "editlab/edit_ops.hpp"
#include "editlab/mask.hpp"
#include "editlab/mixture.hpp"
#include "editlab/sampler.hpp"

namespace editlab {

struct ScheduleSpec {
  int steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double a_scale = 1.0;  // != 1 builds the corrupted-coefficient mutation

  NoiseSchedule build() const;
};

/// Input image: explicit coordinates, or a draw from the source concept.
struct InputSpec {
  std::string source;
  std::optional<Vector> x0;
};

struct EditSection {
  InputSpec input;
  std::string target;
  std::optional<RegionMask> mask;
  double guidance_scale = 6.0;
  double t0_fraction = 0.5;
  int steps = 0;
  MaskMode mode = MaskMode::Soft;
  double preservation = 0.0;
  ObjectiveWeights weights;
};

struct SweepSection {
  std::vector<double> s_grid{1.5, 3.0, 6.0, 9.0, 12.0};
  std::vector<double> t0_fractions{0.2, 0.35, 0.55};
  int seeds = 20;
};

struct TurnSpec {
  std::string target;
  std::optional<RegionMask> mask;
};

struct MultiturnSection {
  std::string source;
  std::vector<TurnSpec> turns;
  double guidance_scale = 6.0;
  double t0_fraction = 0.5;
  MaskMode mode = MaskMode::Soft;
  double preservation = 0.0;
  StabilityPolicy policy;
  int seeds = 1;
  int artifact_samples = 10000;
};

struct DragSection {
  InputSpec input;
  DragSpec spec;
  double t0_fraction = 0.2;
  std::optional<RegionMask> mask;
};

struct CascadedSection {
  std::string source;
  int trials = 100;
  double init_error = 1e-2;
  std::vector<double> deltas;  // one value broadcasts to every level
  bool adversarial = true;
  double min_tightness = 0.9;
  double required_fraction = 1.0;
};

struct GuidanceSection {
  std::vector<std::string> labels;  // empty: every label
  int probes = 1000;
  double s_max = 12.0;
  double required_fraction = 1.0;
};

struct LocalitySection {
  std::string target;
  double guidance_scale = 1.0;
  double t_fraction = 0.5;
  std::string point = "sample";  // or "boundary"
  std::string boundary_other;    // second label for "boundary"
  RegionMask mask;
  std::vector<double> radii{1e-2, 1e-3, 1e-4};
};

struct DriftSection {
  std::string source;
  std::string target;
  double guidance_scale = 1.0;
  double t0_fraction = 1.0;
  int turns = 10;
  int trials = 20;
  double init_error = 1e-2;
  std::vector<double> error_norms;  // one value broadcasts to every turn
  bool affine = false;
  bool check_growth = false;
};

struct VerifySection {
  std::optional<CascadedSection> cascaded;
  std::optional<GuidanceSection> guidance;
  std::optional<LocalitySection> locality;
  std::optional<DriftSection> drift;
};

struct ExperimentConfig {
  explicit ExperimentConfig(MixtureModel m) : model(std::move(m)) {}

  std::string name;
  std::uint64_t seed = 0;
  MixtureModel model;
  ScheduleSpec schedule;
  IdentityResolution identity = IdentityResolution::Source;
  int refine_iters = 50;
  std::optional<EditSection> edit;
  std::optional<SweepSection> sweep;
  std::optional<MultiturnSection> multiturn;
  std::optional<DragSection> drag;
  std::optional<VerifySection> verify;
  nlohmann::json raw;  // the merged document, echoed into reports

  int level(double fraction) const;  // ceil(fraction * T), at least 1
};

/// Parses a config document; a top-level "extends": "<profile>" is resolved
/// first and this document is applied to it as a JSON merge patch.
/// Every failure is a ConfigError.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config_file(const std::filesystem::path& path);
ExperimentConfig load_profile(const std::string& name);

/// Built-in profiles, embedded from configs/ at build time.
std::vector<std::string> builtin_profile_names();
/// Raw JSON text of a profile, or nullptr when unknown.
const char* builtin_profile_text(const std::string& name);

}  // namespace editlab
