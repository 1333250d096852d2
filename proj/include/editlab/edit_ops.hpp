#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "editlab/mask.hpp"
#include "editlab/metrics.hpp"
#include "editlab/mixture.hpp"
#include "editlab/sampler.hpp"

namespace editlab {

struct DragPair {
  Eigen::Index handle = 0;
  Eigen::Index target = 0;
};

enum class DragVariant {
  ReferenceAnchored,  // target window of the edit vs handle window of the input
  PaperLiteral,       // handle vs target window of the same edited image
};

struct DragSpec {
  std::vector<DragPair> pairs;
  int window_radius = 1;
  int iters = 200;
  double step_size = 0.5;
  double beta = 0.0;   // preservation weight
  double gamma = 0.0;  // latent regularizer weight
  DragVariant variant = DragVariant::ReferenceAnchored;
  bool line_search = true;

  void validate(Eigen::Index dim) const;
};

/// An edit request: target concept, optional editable region, optional drag
/// constraints, optional reference point in data space.
struct EditRequest {
  std::optional<Condition> instruction;
  std::optional<RegionMask> mask;
  std::optional<DragSpec> drag;
  std::optional<Vector> reference;

  void validate() const;
};

struct ObjectiveWeights {
  double faith = 1.0;
  double pres = 1.0;
  double qual = 0.0;
  double stab = 0.0;

  void validate() const;
};

struct ObjectiveTerms {
  double faith = 0.0;
  double pres = 0.0;
  double qual = 0.0;
  double stab = 0.0;
  double total = 0.0;
};

/// Extra inputs of the single-edit objective beyond the images.
struct ObjectiveContext {
  const MixtureModel* model = nullptr;
  const RegionMask* inferred_mask = nullptr;  // used when the request has none
  std::optional<Vector> displacement;          // xi - xi_init for the stability term
};

/// Weighted sum of faithfulness, preservation, quality and stability losses:
/// faith = -log p(x_hat | target), pres = ||(1-m).(x_hat - x0)||^2,
/// qual = -log p(x_hat), stab = ||xi - xi_init||^2.
ObjectiveTerms edit_objective(const Vector& x0_hat, const Vector& x0, const EditRequest& request,
                              const ObjectiveWeights& weights, const ObjectiveContext& ctx);

enum class MaskMode { None, Soft, Hard };

std::string to_string(MaskMode mode);
MaskMode mask_mode_from_string(const std::string& s);

/// Soft: x + m.delta, then the outside coordinates take a proximal step of
/// weight `preservation` toward the anchor. Hard: m.(x + delta) + (1-m).anchor.
Vector masked_update(const Vector& x_t, const RegionMask& mask, const Vector& delta,
                     const Vector& anchor, MaskMode mode, double preservation = 0.0);

/// Forward-noised copies of the input x~_t, t = 0..t0, under one seed.
class AnchorTrajectory {
 public:
  AnchorTrajectory(const Vector& x0, int t0, const NoiseSchedule& schedule, const CounterRng& rng);
  const Vector& at(int t) const;
  int top() const { return static_cast<int>(states_.size()) - 1; }

 private:
  std::vector<Vector> states_;
};

struct StabilityPolicy {
  double threshold = 0.9;
  int max_retries = 2;
  double guidance_factor = 0.75;
  double noise_factor = 0.8;
  double preservation_factor = 1.5;

  void validate() const;
};

struct EditorOptions {
  int refine_iters = 50;
  IdentityResolution identity = IdentityResolution::Source;
  std::uint64_t probe_seed = 0;
};

struct EditReport {
  MaskMode mode = MaskMode::None;
  EditParams params;
  double preservation = 0.0;
  std::string source;
  std::string target;
  Trajectory inversion;
  Trajectory reverse;
  MetricReport metrics;
  int reverse_steps = 0;
  int inversion_levels = 0;

  nlohmann::json to_json(bool include_trajectories = false) const;
};

struct EditResult {
  Vector x0_hat;
  EditReport report;
};

struct DragIteration {
  int iteration = 0;
  double drag = 0.0;
  double pres = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

struct DragResult {
  Vector x0_hat;
  Vector xi_init;
  Vector xi_final;
  std::vector<DragIteration> history;
  int iterations = 0;
  bool stalled = false;

  /// CSV with header "iteration,L_drag,L_pres,L_reg,total".
  std::string history_csv() const;
  nlohmann::json to_json() const;
};

struct MultiTurnResult {
  Vector final_image;
  std::vector<TurnRecord> records;  // records[0] is the input, drift 0
  bool unstable = false;
  StabilitySummary summary;

  /// CSV with header
  /// "turn,faithfulness,consistency,stability,drift,retried,artifact".
  std::string records_csv() const;
  nlohmann::json to_json() const;
};

/// The four editing procedures over one model and schedule.
class Editor {
 public:
  Editor(MixtureModel model, NoiseSchedule schedule, EditorOptions options = {});

  const MixtureModel& model() const { return model_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const EditorOptions& options() const { return options_; }
  const ConsistencyProbe& probe() const { return probe_; }
  Condition identity_condition(const std::string& source_label) const;

  /// Inversion under the identity condition, guided reverse run toward the
  /// request's instruction, per-step masked update when a mask is present.
  EditResult invert_and_edit(const Vector& x0, const std::string& source_label,
                             const EditRequest& request, const EditParams& params, MaskMode mode,
                             double preservation = 0.0) const;

  /// Optimizes the inverted latent against windowed drag losses with
  /// finite-difference gradients and backtracking.
  DragResult drag_edit(const Vector& x0, const std::string& source_label, const DragSpec& spec,
                       const EditParams& params, const RegionMask* mask = nullptr) const;

  /// Sequential editing with stability tracking and conservative retries.
  MultiTurnResult iterative_edit(const Vector& x0, const std::string& source_label,
                                 const std::vector<EditRequest>& requests,
                                 const EditParams& params, MaskMode mode,
                                 const StabilityPolicy& policy,
                                 const ArtifactThreshold& threshold,
                                 double preservation = 0.0) const;

 private:
  MixtureModel model_;
  NoiseSchedule schedule_;
  EditorOptions options_;
  ConsistencyProbe probe_;
};

/// Coordinates of the drag window of radius w around `center`, restricted
/// to offsets valid for both points of the pair.
std::vector<Eigen::Index> drag_window(const DragPair& pair, int radius, Eigen::Index dim,
                                      bool around_target);

}  // namespace editlab
