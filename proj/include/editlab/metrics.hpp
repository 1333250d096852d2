#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "editlab/mask.hpp"
#include "editlab/mixture.hpp"

namespace editlab {

/// Desk-scale stand-ins for the usual editing metrics. Faithfulness is the
/// target-conditional log-density (a proxy for an instruction-image score),
/// consistency a cosine similarity of seeded random projections (a proxy for
/// an embedding similarity), identity drift a Mahalanobis distance under the
/// source component.
struct MetricReport {
  double faithfulness = 0.0;
  double locality_mse = 0.0;
  double locality_max = 0.0;
  double consistency = 1.0;
  double quality_nll = 0.0;
  double identity_drift = 0.0;
  bool locality_degenerate = false;
  bool consistency_degenerate = false;

  nlohmann::json to_json() const;
};

double faithfulness(const Vector& x, const Condition& target, const MixtureModel& model);

struct LocalityResult {
  double mse = 0.0;
  double max = 0.0;
  bool degenerate = false;
};

/// Deviation over the preserved (mask false) coordinates.
LocalityResult locality(const Vector& x_hat, const Vector& x0, const RegionMask& mask);

/// Fixed k x d standard-normal projection, drawn once per experiment seed.
class ConsistencyProbe {
 public:
  ConsistencyProbe(Eigen::Index dim, std::uint64_t seed, Eigen::Index k = 16);
  const Matrix& projection() const { return projection_; }

 private:
  Matrix projection_;
};

struct ConsistencyResult {
  double value = 1.0;
  bool degenerate = false;
};

/// cos(P ((1-m) . x_hat), P ((1-m) . x0)).
ConsistencyResult consistency(const Vector& x_hat, const Vector& x0, const RegionMask& mask,
                              const ConsistencyProbe& probe);

/// Negative log-density under the full (unconditional) data mixture.
double quality_nll(const Vector& x, const MixtureModel& model);

/// Mahalanobis distance of x_hat from x0 under the covariance of the first
/// component the source condition selects.
double identity_drift(const Vector& x_hat, const Vector& x0, const MixtureModel& model,
                      const Condition& source);

/// All metrics at once; with no mask the locality and consistency metrics are
/// taken over every coordinate.
MetricReport evaluate_metrics(const Vector& x_hat, const Vector& x0, const MixtureModel& model,
                              const Condition& target, const Condition& source,
                              const RegionMask* mask, const ConsistencyProbe& probe);

/// Threshold on quality_nll above which a turn counts as an artifact.
struct ArtifactThreshold {
  double value = 0.0;
  double quantile = 0.99;
  int samples = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

/// Nearest-rank quantile of the negative log-density of samples drawn from
/// the full data mixture.
ArtifactThreshold calibrate_artifact_threshold(const MixtureModel& model, std::uint64_t seed,
                                               int samples = 10000, double quantile = 0.99);

struct TurnRecord {
  int turn = 0;
  Vector image;
  MetricReport metrics;
  double stability = 1.0;  // similarity to the previous turn on non-target content
  double drift = 0.0;      // distance of non-target content from turn 0
  bool retried = false;
  int attempts = 1;
  bool artifact = false;
  double guidance_scale = 0.0;
  int noise_level = 0;
};

struct StabilitySummary {
  double stab = 1.0;
  double art = 0.0;
};

/// Stab is the mean non-target consistency over consecutive turns; Art is the
/// fraction of turns whose quality_nll exceeds the threshold. Art is reported
/// alongside Stab rather than folded into it.
StabilitySummary stability_and_artifacts(const std::vector<TurnRecord>& records,
                                         const ArtifactThreshold& threshold,
                                         const RegionMask& mask, const ConsistencyProbe& probe);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace editlab
