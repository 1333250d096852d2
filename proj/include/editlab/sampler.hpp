#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "editlab/mixture.hpp"
#include "editlab/rng.hpp"

namespace editlab {

/// Coefficients of the deterministic step x_{t-1} = a x_t + b eps.
struct StepCoefficients {
  double a = 1.0;
  double b = 0.0;
};

/// a = sqrt(ab_prev / ab), b = sqrt(1 - ab_prev) - a sqrt(1 - ab).
StepCoefficients ddim_coefficients(double alpha_bar_prev, double alpha_bar);

/// Timestep grid t = 0..T with cumulative signal coefficients alpha_bar[t]
/// (alpha_bar[0] = 1) and the derived step coefficients a_t, b_t.
class NoiseSchedule {
 public:
  /// Linear betas from beta_start to beta_end over `base_steps` fine steps,
  /// subsampled evenly to `steps` levels.
  static NoiseSchedule linear(int steps, double beta_start = 1e-4, double beta_end = 0.02,
                              int base_steps = 1000);
  /// Validates monotonicity, the terminal level and the coefficient identities.
  static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar);

  /// Mutation sentinel: scales every a_t by `factor` and re-derives b_t from
  /// the scaled value, leaving alpha_bar untouched. Skips validation.
  NoiseSchedule with_corrupted_signal_ratio(double factor) const;

  int steps() const { return static_cast<int>(alpha_bar_.size()) - 1; }
  double alpha_bar(int t) const;
  double a(int t) const;
  double b(int t) const;
  StepCoefficients coefficients(int t) const { return {a(t), b(t)}; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }
  bool mutated() const { return mutated_; }

  /// CSV with header "t,alpha_bar,a,b"; row t = 0 carries a = 1, b = 0.
  std::string to_csv() const;

 private:
  NoiseSchedule() = default;
  void check_step(int t) const;

  std::vector<double> alpha_bar_;
  std::vector<double> a_;  // index 0 unused
  std::vector<double> b_;
  bool mutated_ = false;
};

struct LatentState {
  Vector x;
  int t = 0;
};

enum class Direction { Forward, Reverse };

struct Trajectory {
  std::vector<LatentState> states;
  Direction direction = Direction::Reverse;
  std::string condition;
  double guidance_scale = 1.0;

  const LatentState& front() const { return states.front(); }
  const LatentState& back() const { return states.back(); }
  /// Throws DomainError unless timesteps are strictly monotone in the
  /// declared direction and dimensions agree.
  void validate() const;
  /// CSV with header "t,x_0,...,x_{d-1}".
  std::string to_csv() const;
};

/// Upper guard on the guidance scale accepted anywhere.
inline constexpr double kMaxGuidanceScale = 20.0;

/// Knobs of a single guided edit.
struct EditParams {
  double guidance_scale = 1.0;
  int noise_level = 1;  // t0
  int steps = 0;        // reverse steps taken from t0; 0 means all t0 of them
  std::uint64_t seed = 0;

  int effective_steps() const { return steps == 0 ? noise_level : steps; }
  void validate(const NoiseSchedule& schedule) const;
};

/// Noise prediction field of one condition, with the noised mixtures for all
/// levels of a schedule precomputed.
class EpsField {
 public:
  EpsField(const MixtureModel& model, Condition cond, const NoiseSchedule& schedule);

  const Condition& condition() const { return cond_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const NoisedMixture& at(int t) const;
  /// True when the condition selects a single Gaussian: eps is affine in x.
  bool affine() const { return levels_.front().is_single_gaussian(); }

  Vector eps(const Vector& x, int t) const;
  /// d eps / dx = -sqrt(1 - alpha_bar_t) * Hessian of log p_t.
  Matrix eps_jacobian(const Vector& x, int t) const;

 private:
  Condition cond_;
  NoiseSchedule schedule_;
  std::vector<NoisedMixture> levels_;
};

/// Classifier-free guided denoiser: an unconditional and a conditional
/// branch over a shared schedule.
class GuidedDenoiser {
 public:
  GuidedDenoiser(const MixtureModel& model, const Condition& cond, const NoiseSchedule& schedule);

  const EpsField& unconditional() const { return uncond_; }
  const EpsField& conditional() const { return cond_; }
  const NoiseSchedule& schedule() const { return cond_.schedule(); }
  bool affine() const { return uncond_.affine() && cond_.affine(); }
  /// The condition selects every component, so both branches coincide and
  /// the guidance scale has no effect.
  bool inert() const { return inert_; }
  /// Whether the guided step at scale s is affine in x; at s = 0 or s = 1 only
  /// one branch contributes.
  bool affine_at(double s) const {
    if (s == 1.0 || inert_) return cond_.affine();
    if (s == 0.0) return uncond_.affine();
    return affine();
  }

 private:
  EpsField uncond_;
  EpsField cond_;
  bool inert_ = false;
};

/// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) z with z read from stream t of `rng`.
LatentState forward_noise(const Vector& x0, int t, const NoiseSchedule& schedule,
                          const CounterRng& rng);
/// Same with an explicit noise vector.
LatentState forward_noise(const Vector& x0, int t, const NoiseSchedule& schedule, const Vector& z);

/// eps_u + s (eps_c - eps_u), evaluated as (1 - s) eps_u + s eps_c; an inert
/// denoiser returns eps_c.
Vector cfg_eps(const GuidedDenoiser& denoiser, const Vector& x_t, int t, double s);

/// x_{t-1} = a_t x_t + b_t eps.
LatentState ddim_step(const LatentState& state, const Vector& eps, const NoiseSchedule& schedule);

/// One guided reverse step F_t(x; c) = a_t x + b_t cfg_eps(x).
Vector guided_step(const GuidedDenoiser& denoiser, const Vector& x_t, int t, double s);

/// One-shot posterior-mean estimate of x_0 from x_t using the guided eps.
Vector predict_x0(const GuidedDenoiser& denoiser, const Vector& x_t, int t, double s);

/// Per-step interception points of a reverse run. Either may throw HookAbort.
struct StepHooks {
  /// Inspect or replace eps before it is applied.
  std::function<void(int t, const Vector& x_t, Vector& eps)> on_eps;
  /// Inspect or rewrite the freshly computed x_{t-1}; `x_t` is the input.
  std::function<void(int t, const Vector& x_t, Vector& x_prev)> on_state;
};

struct ReverseResult {
  Vector x0_hat;  // final state (level `stop_level`)
  Trajectory trajectory;
};

/// Guided reverse rollout from x_init.t down to `stop_level` (default 0),
/// one integer level at a time.
ReverseResult reverse_run(const LatentState& x_init, const GuidedDenoiser& denoiser, double s,
                          const StepHooks& hooks = {}, int stop_level = 0);

/// First-order DDIM inversion of x0 up to level t0 using `field` (usually
/// the identity condition). Each level t -> t+1 solves
/// x_{t+1} = (x_t - b_{t+1} eps(x_{t+1}, t+1)) / a_{t+1}, starting from eps at
/// the known endpoint x_t and refining by fixed-point iteration.
Trajectory ddim_invert(const Vector& x0, const EpsField& field, int t0, int refine_iters);

}  // namespace editlab
