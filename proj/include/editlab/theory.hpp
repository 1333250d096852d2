#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "editlab/mask.hpp"
#include "editlab/sampler.hpp"

namespace editlab {

/// One verified inequality, aggregated over trials. lhs/rhs/slack describe
/// the worst trial (smallest slack).
struct BoundReport {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;
  bool satisfied = false;  // slack >= -tolerance for the worst trial
  int probes = 0;
  int trials = 0;
  int satisfied_count = 0;
  int required_count = 0;
  double tolerance = 0.0;
  nlohmann::json metadata = nlohmann::json::object();

  /// The checker's satisfaction criterion: enough satisfied trials plus any
  /// checker-specific side conditions recorded in metadata["checks"].
  bool passed() const;
  nlohmann::json to_json() const;
};

/// Summary CSV: name,trials,satisfied_count,min_slack,constants_digest.
std::string bound_summary_csv(const std::vector<BoundReport>& reports);

struct SpectralNorm {
  double value = 0.0;
  Vector right;  // unit right singular vector estimate
  int iterations = 0;
};

/// Power iteration on A^T A from a seeded start vector. The reported value
/// is ||A v|| for the final unit iterate v, so it never exceeds the true norm.
SpectralNorm spectral_norm(const Matrix& a, int max_iters = 200, double rel_tol = 1e-10,
                           std::uint64_t seed = 0x5eed);

/// Largest singular value from a full SVD.
double exact_spectral_norm(const Matrix& a);

/// Dimension up to which operator_norm uses a full SVD.
inline constexpr Eigen::Index kExactNormMaxDim = 64;

/// Largest singular value: exact for small matrices, power iteration beyond.
double operator_norm(const Matrix& a);

/// J_t = a_t I + b_t ((1 - s) d eps_u + s d eps_c).
Matrix step_jacobian(const GuidedDenoiser& denoiser, const Vector& x_t, int t, double s);

enum class LipschitzMethod { AnalyticAffine, SampledJacobian };

struct LipschitzEstimate {
  std::vector<double> values;  // one per timestep examined
  LipschitzMethod method = LipschitzMethod::SampledJacobian;
  int samples = 0;
  std::string region;

  double max() const;
};

/// max ||J_t|| over `segments + 1` evenly spaced points of the segment
/// [from, to] (both endpoints included). Affine denoisers are handled
/// exactly from a single Jacobian.
LipschitzEstimate estimate_lipschitz(const GuidedDenoiser& denoiser, const Vector& from,
                                     const Vector& to, int t, double s, int segments = 34);

/// max ||J_t|| over `samples` uniform points in the ball of `radius` around
/// `center`; the first n points are the same for every sample count.
LipschitzEstimate estimate_lipschitz_ball(const GuidedDenoiser& denoiser, const Vector& center,
                                          double radius, int t, double s, int samples,
                                          std::uint64_t seed);

struct CascadedOptions {
  int horizon = 0;              // T; 0 means the full schedule
  std::vector<double> deltas;   // delta_k for k = 1..horizon; empty means zeros
  double init_error = 0.0;      // e_T
  double guidance_scale = 1.0;  // identity branch only at 1
  int trials = 100;
  bool adversarial = false;     // align errors with top singular directions
  double required_fraction = 1.0;
  double tolerance = 1e-8;
  int segments = 34;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Reconstruction error of a perturbed reverse rollout against
/// (prod L_t) e_T + sum_k (prod_{t<k} L_t) delta_k.
BoundReport check_cascaded_bound(const GuidedDenoiser& identity, const CascadedOptions& options);

struct GuidanceOptions {
  int probes = 1000;
  double s_max = 12.0;
  double pair_radius = 1.0;
  double rel_tolerance = 1e-10;
  double required_fraction = 1.0;  // of part 2 pairs
  int segments = 34;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct GuidanceProbe {
  double lhs = 0.0;
  double rhs = 0.0;
};

/// Part 1 at one point: ||x_{t-1}(s) - x_{t-1}(s')|| against
/// |b_t| |s - s'| ||eps_c - eps_u||, with b_t recomputed from alpha_bar.
GuidanceProbe guidance_difference(const GuidedDenoiser& denoiser, const Vector& x_t, int t,
                                  double s, double s_prime);

/// Runs part 1 (equality, relative error) and part 2 (step Lipschitz bound)
/// over random probes drawn across the given conditions. Returns both reports.
std::vector<BoundReport> check_guidance_amplification(const std::vector<GuidedDenoiser>& denoisers,
                                                      const GuidanceOptions& options);

struct LocalityOptions {
  std::vector<double> radii{1e-2, 1e-3, 1e-4};
  double max_ratio_excess = 0.05;  // ratio at the smallest radius <= 1 + this
  double affine_tolerance = 1e-6;  // |ratio - 1| for affine fields
  double zero_coupling = 1e-14;
  std::uint64_t seed = 0;
};

/// One-step locality: bit-exact hard locking, and soft leakage against
/// ||J_OI|| r as the inside perturbation radius r shrinks.
BoundReport check_locality_bound(const GuidedDenoiser& denoiser, const Vector& x_t, int t,
                                 double s, const RegionMask& mask, const Vector& anchor,
                                 const LocalityOptions& options = {});

using EditorMap = std::function<Vector(const Vector&)>;

struct DriftOptions {
  int turns = 10;                   // K
  std::vector<double> error_norms;  // ||eps_k||, k = 0..K-1; empty means zeros
  double init_error = 1e-2;         // e_0
  int trials = 20;
  bool affine = false;              // constant Jacobian: estimate L once
  int segments = 2;
  double fd_step = 1e-4;
  double tolerance = 1e-8;
  bool check_growth = false;        // e_K / e_0 within a factor 2 of L^K
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Central-difference Jacobian of an arbitrary map.
Matrix finite_difference_jacobian(const EditorMap& map, const Vector& x, double step);

/// Iterated editing from x_start and a perturbed copy with injected per-turn
/// errors, against L^K e_0 + sum_k L^{K-1-k} ||eps_k||.
BoundReport check_drift_bound(const EditorMap& editor, const Vector& x_start,
                              const DriftOptions& options);

}  // namespace editlab
