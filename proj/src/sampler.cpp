#include "editlab/sampler.hpp"

#include <cmath>
#include <iostream>

#include "editlab/errors.hpp"
#include "editlab/format.hpp"

namespace editlab {

namespace {

constexpr double kIdentityTol = 1e-12;
constexpr double kMaxTerminalAlphaBar = 0.1;
constexpr double kInversionBlowup = 1e3;

}  // namespace

StepCoefficients ddim_coefficients(double alpha_bar_prev, double alpha_bar) {
  if (!(alpha_bar > 0.0 && alpha_bar <= 1.0 && alpha_bar_prev > 0.0 && alpha_bar_prev <= 1.0)) {
    throw DomainError("alpha_bar values must lie in (0, 1]");
  }
  const double a = std::sqrt(alpha_bar_prev / alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar_prev) - a * std::sqrt(1.0 - alpha_bar);
  return {a, b};
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end,
                                    int base_steps) {
  if (steps < 1) throw DomainError("schedule needs at least one step");
  if (base_steps < steps) throw DomainError("base_steps must be >= steps");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    throw DomainError("beta range must satisfy 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> fine(static_cast<std::size_t>(base_steps) + 1, 1.0);
  for (int i = 1; i <= base_steps; ++i) {
    const double frac = base_steps == 1 ? 0.0 : static_cast<double>(i - 1) / (base_steps - 1);
    const double beta = beta_start + frac * (beta_end - beta_start);
    fine[i] = fine[i - 1] * (1.0 - beta);
  }
  std::vector<double> alpha_bar(static_cast<std::size_t>(steps) + 1);
  for (int t = 0; t <= steps; ++t) {
    const auto idx = static_cast<std::size_t>(
        std::llround(static_cast<double>(t) * base_steps / static_cast<double>(steps)));
    alpha_bar[t] = fine[idx];
  }
  return from_alpha_bar(std::move(alpha_bar));
}

NoiseSchedule NoiseSchedule::from_alpha_bar(std::vector<double> alpha_bar) {
  if (alpha_bar.size() < 2) throw DomainError("schedule needs at least one step");
  if (alpha_bar.front() != 1.0) throw DomainError("alpha_bar[0] must equal 1");
  for (std::size_t t = 1; t < alpha_bar.size(); ++t) {
    if (!(alpha_bar[t] < alpha_bar[t - 1])) {
      throw DomainError("alpha_bar must be strictly decreasing (t = " + std::to_string(t) + ")");
    }
  }
  if (!(alpha_bar.back() > 0.0 && alpha_bar.back() <= kMaxTerminalAlphaBar)) {
    throw DomainError("terminal alpha_bar " + std::to_string(alpha_bar.back()) +
                      " outside (0, 0.1]");
  }
  NoiseSchedule s;
  s.alpha_bar_ = std::move(alpha_bar);
  const std::size_t n = s.alpha_bar_.size();
  s.a_.assign(n, 1.0);
  s.b_.assign(n, 0.0);
  for (std::size_t t = 1; t < n; ++t) {
    const auto c = ddim_coefficients(s.alpha_bar_[t - 1], s.alpha_bar_[t]);
    s.a_[t] = c.a;
    s.b_[t] = c.b;
    if (c.a < 1.0) throw DomainError("a_t < 1 at t = " + std::to_string(t));
    if (c.b > 0.0) throw DomainError("b_t > 0 at t = " + std::to_string(t));
    if (std::abs(c.a * std::sqrt(s.alpha_bar_[t]) - std::sqrt(s.alpha_bar_[t - 1])) >
        kIdentityTol) {
      throw DomainError("signal identity violated at t = " + std::to_string(t));
    }
  }
  return s;
}

NoiseSchedule NoiseSchedule::with_corrupted_signal_ratio(double factor) const {
  NoiseSchedule s = *this;
  s.mutated_ = true;
  for (std::size_t t = 1; t < s.alpha_bar_.size(); ++t) {
    s.a_[t] *= factor;
    s.b_[t] = std::sqrt(1.0 - s.alpha_bar_[t - 1]) - s.a_[t] * std::sqrt(1.0 - s.alpha_bar_[t]);
  }
  return s;
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > steps()) {
    throw DomainError("step index " + std::to_string(t) + " outside 1.." +
                      std::to_string(steps()));
  }
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) {
    throw DomainError("timestep " + std::to_string(t) + " outside 0.." + std::to_string(steps()));
  }
  return alpha_bar_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::a(int t) const {
  check_step(t);
  return a_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::b(int t) const {
  check_step(t);
  return b_[static_cast<std::size_t>(t)];
}

std::string NoiseSchedule::to_csv() const {
  std::string out = "t,alpha_bar,a,b\n";
  for (std::size_t t = 0; t < alpha_bar_.size(); ++t) {
    out += std::to_string(t) + ',' + format_double(alpha_bar_[t]) + ',' + format_double(a_[t]) +
           ',' + format_double(b_[t]) + '\n';
  }
  return out;
}

void Trajectory::validate() const {
  for (std::size_t i = 1; i < states.size(); ++i) {
    const bool ok = direction == Direction::Forward ? states[i].t > states[i - 1].t
                                                    : states[i].t < states[i - 1].t;
    if (!ok) throw DomainError("trajectory timesteps are not monotone");
    if (states[i].x.size() != states[i - 1].x.size()) {
      throw DomainError("trajectory dimension changes between states");
    }
  }
}

std::string Trajectory::to_csv() const {
  std::string out = "t";
  const Eigen::Index d = states.empty() ? 0 : states.front().x.size();
  for (Eigen::Index i = 0; i < d; ++i) out += ",x_" + std::to_string(i);
  out += '\n';
  for (const auto& s : states) out += std::to_string(s.t) + ',' + join_csv(s.x) + '\n';
  return out;
}

void EditParams::validate(const NoiseSchedule& schedule) const {
  if (!(guidance_scale >= 0.0 && guidance_scale <= kMaxGuidanceScale)) {
    throw DomainError("guidance scale must lie in [0, 20]");
  }
  if (noise_level < 1 || noise_level > schedule.steps()) {
    throw DomainError("noise level t0 must lie in 1.." + std::to_string(schedule.steps()));
  }
  if (steps < 0 || steps > noise_level) throw DomainError("steps must lie in 0..t0");
}

EpsField::EpsField(const MixtureModel& model, Condition cond, const NoiseSchedule& schedule)
    : cond_(std::move(cond)), schedule_(schedule) {
  levels_.reserve(static_cast<std::size_t>(schedule.steps()) + 1);
  for (int t = 0; t <= schedule.steps(); ++t) {
    levels_.emplace_back(model, cond_, schedule.alpha_bar(t));
  }
}

const NoisedMixture& EpsField::at(int t) const {
  if (t < 0 || t > schedule_.steps()) throw DomainError("timestep out of range");
  return levels_[static_cast<std::size_t>(t)];
}

Vector EpsField::eps(const Vector& x, int t) const {
  if (t < 1) throw DomainError("eps is undefined at t = 0 (alpha_bar = 1)");
  const auto& nm = at(t);
  return -std::sqrt(1.0 - nm.alpha_bar()) * nm.score(x);
}

Matrix EpsField::eps_jacobian(const Vector& x, int t) const {
  if (t < 1) throw DomainError("eps is undefined at t = 0 (alpha_bar = 1)");
  const auto& nm = at(t);
  return -std::sqrt(1.0 - nm.alpha_bar()) * nm.score_jacobian(x);
}

GuidedDenoiser::GuidedDenoiser(const MixtureModel& model, const Condition& cond,
                               const NoiseSchedule& schedule)
    : uncond_(model, Condition::unconditional(model), schedule),
      cond_(model, cond, schedule),
      inert_(cond.resolved() == uncond_.condition().resolved()) {
  if (cond.kind() == Condition::Kind::Unconditional) {
    std::clog << "editlab: warning: guidance toward the unconditional branch; scale is inert\n";
  }
}

LatentState forward_noise(const Vector& x0, int t, const NoiseSchedule& schedule,
                          const CounterRng& rng) {
  if (t == 0) return {x0, 0};
  return forward_noise(x0, t, schedule, rng.normal_vector(static_cast<std::uint64_t>(t), x0.size()));
}

LatentState forward_noise(const Vector& x0, int t, const NoiseSchedule& schedule, const Vector& z) {
  const double ab = schedule.alpha_bar(t);
  if (t == 0) return {x0, 0};
  if (z.size() != x0.size()) throw DomainError("noise dimension mismatch");
  return {std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * z, t};
}

Vector cfg_eps(const GuidedDenoiser& denoiser, const Vector& x_t, int t, double s) {
  const Vector ec = denoiser.conditional().eps(x_t, t);
  if (denoiser.inert()) return ec;
  const Vector eu = denoiser.unconditional().eps(x_t, t);
  // (1 - s) eu + s ec reproduces either branch exactly at s = 0 and s = 1
  return (1.0 - s) * eu + s * ec;
}

LatentState ddim_step(const LatentState& state, const Vector& eps, const NoiseSchedule& schedule) {
  if (state.t < 1) throw DomainError("cannot step below t = 0");
  if (eps.size() != state.x.size()) throw DomainError("eps dimension mismatch");
  const double a = schedule.a(state.t);
  const double b = schedule.b(state.t);
  return {a * state.x + b * eps, state.t - 1};
}

Vector guided_step(const GuidedDenoiser& denoiser, const Vector& x_t, int t, double s) {
  return ddim_step({x_t, t}, cfg_eps(denoiser, x_t, t, s), denoiser.schedule()).x;
}

Vector predict_x0(const GuidedDenoiser& denoiser, const Vector& x_t, int t, double s) {
  if (t == 0) return x_t;
  const double ab = denoiser.schedule().alpha_bar(t);
  return (x_t - std::sqrt(1.0 - ab) * cfg_eps(denoiser, x_t, t, s)) / std::sqrt(ab);
}

ReverseResult reverse_run(const LatentState& x_init, const GuidedDenoiser& denoiser, double s,
                          const StepHooks& hooks, int stop_level) {
  if (x_init.t < 1) throw DomainError("reverse run needs a start level >= 1");
  if (stop_level < 0 || stop_level >= x_init.t) throw DomainError("invalid stop level");
  const auto& schedule = denoiser.schedule();

  ReverseResult out;
  out.trajectory.direction = Direction::Reverse;
  out.trajectory.condition = denoiser.conditional().condition().describe();
  out.trajectory.guidance_scale = s;
  out.trajectory.states.reserve(static_cast<std::size_t>(x_init.t - stop_level) + 1);
  out.trajectory.states.push_back(x_init);

  LatentState cur = x_init;
  while (cur.t > stop_level) {
    Vector eps = cfg_eps(denoiser, cur.x, cur.t, s);
    if (hooks.on_eps) hooks.on_eps(cur.t, cur.x, eps);
    LatentState next = ddim_step(cur, eps, schedule);
    if (hooks.on_state) hooks.on_state(cur.t, cur.x, next.x);
    out.trajectory.states.push_back(next);
    cur = std::move(next);
  }
  out.x0_hat = cur.x;
  return out;
}

Trajectory ddim_invert(const Vector& x0, const EpsField& field, int t0, int refine_iters) {
  const auto& schedule = field.schedule();
  if (t0 < 0 || t0 > schedule.steps()) throw DomainError("inversion level out of range");
  if (refine_iters < 0) throw DomainError("refine_iters must be >= 0");

  Trajectory traj;
  traj.direction = Direction::Forward;
  traj.condition = field.condition().describe();
  traj.states.push_back({x0, 0});

  Vector x = x0;
  for (int t = 0; t < t0; ++t) {
    const int next = t + 1;
    const double a = schedule.a(next);
    const double b = schedule.b(next);
    Vector guess = (x - b * field.eps(x, next)) / a;
    for (int k = 0; k < refine_iters; ++k) {
      Vector refined = (x - b * field.eps(guess, next)) / a;
      const double update = (refined - guess).norm();
      if (!std::isfinite(update) || update > kInversionBlowup) {
        throw DivergenceError("inversion refinement diverged at level " + std::to_string(next));
      }
      guess = std::move(refined);
      if (update == 0.0) break;
    }
    x = std::move(guess);
    traj.states.push_back({x, next});
  }
  return traj;
}

}  // namespace editlab
