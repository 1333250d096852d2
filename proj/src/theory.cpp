#include "editlab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "editlab/edit_ops.hpp"
#include "editlab/errors.hpp"
#include "editlab/format.hpp"
#include "editlab/parallel.hpp"

namespace editlab {

namespace {

struct TrialOutcome {
  double lhs = 0.0;
  double rhs = 0.0;
  nlohmann::json constants;
};

/// Folds per-trial outcomes into one report: counts plus the worst trial.
BoundReport aggregate(std::string name, const std::vector<TrialOutcome>& trials, double tolerance,
                      int required) {
  BoundReport r;
  r.name = std::move(name);
  r.trials = static_cast<int>(trials.size());
  r.probes = r.trials;
  r.tolerance = tolerance;
  r.required_count = required;
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& t : trials) {
    const double slack = t.rhs - t.lhs;
    if (slack >= -tolerance) ++r.satisfied_count;
    if (slack < worst) {
      worst = slack;
      r.lhs = t.lhs;
      r.rhs = t.rhs;
      r.slack = slack;
      r.metadata["worst_trial"] = t.constants;
    }
  }
  r.satisfied = r.slack >= -tolerance;
  r.metadata["tolerance"] = tolerance;
  return r;
}

std::vector<double> clean_deltas(const std::vector<double>& given, int n) {
  if (given.empty()) return std::vector<double>(static_cast<std::size_t>(n), 0.0);
  if (static_cast<int>(given.size()) != n) {
    throw DomainError("expected " + std::to_string(n) + " per-step error norms");
  }
  for (double d : given) {
    if (d < 0.0) throw DomainError("error norms must be non-negative");
  }
  return given;
}

// A probe is kept when |b| |s - s'| ||eps_c - eps_u|| is at least this
// fraction of the step output magnitude, so rounding cannot mask a 1e-10
// relative deviation.
constexpr double kProbeConditioning = 1e-4;
constexpr int kMaxProbeDraws = 64;

int required_for(int trials, double fraction) {
  return static_cast<int>(std::ceil(fraction * trials - 1e-9));
}

Matrix block(const Matrix& m, const std::vector<Eigen::Index>& rows,
             const std::vector<Eigen::Index>& cols) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = m(rows[i], cols[k]);
    }
  }
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

bool BoundReport::passed() const {
  if (satisfied_count < required_count) return false;
  if (metadata.contains("checks")) {
    for (const auto& [k, v] : metadata.at("checks").items()) {
      if (!v.get<bool>()) return false;
    }
  }
  return true;
}

nlohmann::json BoundReport::to_json() const {
  return {{"name", name},
          {"lhs", lhs},
          {"rhs", rhs},
          {"slack", slack},
          {"satisfied", satisfied},
          {"passed", passed()},
          {"probes", probes},
          {"trials", trials},
          {"satisfied_count", satisfied_count},
          {"required_count", required_count},
          {"tolerance", tolerance},
          {"metadata", metadata}};
}

std::string bound_summary_csv(const std::vector<BoundReport>& reports) {
  std::string out = "name,trials,satisfied_count,min_slack,constants_digest\n";
  for (const auto& r : reports) {
    char digest[17];
    std::snprintf(digest, sizeof digest, "%016llx",
                  static_cast<unsigned long long>(fnv1a(r.metadata.dump())));
    out += r.name + ',' + std::to_string(r.trials) + ',' + std::to_string(r.satisfied_count) +
           ',' + format_double(r.slack) + ',' + digest + '\n';
  }
  return out;
}

SpectralNorm spectral_norm(const Matrix& a, int max_iters, double rel_tol, std::uint64_t seed) {
  SpectralNorm out;
  if (a.size() == 0) return out;
  Vector v = CounterRng(seed).unit_vector(0, a.cols());
  double prev = 0.0;
  for (int it = 1; it <= max_iters; ++it) {
    const Vector w = a * v;
    Vector u = a.transpose() * w;
    const double n = u.norm();
    out.iterations = it;
    if (n == 0.0) break;
    v = u / n;
    const double est = (a * v).norm();
    if (std::abs(est - prev) <= rel_tol * est) break;
    prev = est;
  }
  out.right = v;
  out.value = (a * v).norm();
  return out;
}

double exact_spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues()(0);
}

// Exact SVD while it is cheap; power iteration stalls on near-tied top
// singular values and would understate L.
double operator_norm(const Matrix& a) {
  return a.cols() <= kExactNormMaxDim ? exact_spectral_norm(a) : spectral_norm(a).value;
}

Matrix step_jacobian(const GuidedDenoiser& denoiser, const Vector& x_t, int t, double s) {
  const auto& schedule = denoiser.schedule();
  const Matrix jc = denoiser.conditional().eps_jacobian(x_t, t);
  Matrix j = denoiser.inert()
                 ? Matrix(schedule.b(t) * jc)
                 : Matrix(schedule.b(t) * ((1.0 - s) * denoiser.unconditional().eps_jacobian(x_t, t) +
                                           s * jc));
  j.diagonal().array() += schedule.a(t);
  return j;
}

double LipschitzEstimate::max() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

LipschitzEstimate estimate_lipschitz(const GuidedDenoiser& denoiser, const Vector& from,
                                     const Vector& to, int t, double s, int segments) {
  if (segments < 1) throw DomainError("need at least one segment");
  LipschitzEstimate est;
  est.region = "segment";
  if (denoiser.affine_at(s)) {
    est.method = LipschitzMethod::AnalyticAffine;
    est.samples = 1;
    est.values.push_back(exact_spectral_norm(step_jacobian(denoiser, from, t, s)));
    return est;
  }
  est.method = LipschitzMethod::SampledJacobian;
  est.samples = segments + 1;
  double best = 0.0;
  for (int k = 0; k <= segments; ++k) {
    const double w = static_cast<double>(k) / segments;
    const Vector x = (1.0 - w) * from + w * to;
    best = std::max(best, operator_norm(step_jacobian(denoiser, x, t, s)));
  }
  est.values.push_back(best);
  return est;
}

LipschitzEstimate estimate_lipschitz_ball(const GuidedDenoiser& denoiser, const Vector& center,
                                          double radius, int t, double s, int samples,
                                          std::uint64_t seed) {
  if (samples < 1) throw DomainError("need at least one sample");
  LipschitzEstimate est;
  est.region = "ball";
  if (denoiser.affine_at(s)) {
    est.method = LipschitzMethod::AnalyticAffine;
    est.samples = 1;
    est.values.push_back(exact_spectral_norm(step_jacobian(denoiser, center, t, s)));
    return est;
  }
  est.method = LipschitzMethod::SampledJacobian;
  est.samples = samples;
  const CounterRng rng = CounterRng(seed).derive("lipschitz-ball");
  const double d = static_cast<double>(center.size());
  double best = 0.0;
  for (int k = 0; k < samples; ++k) {
    const auto stream = static_cast<std::uint64_t>(k);
    const double r = radius * std::pow(rng.uniform(stream, 1u << 20), 1.0 / d);
    const Vector x = center + r * rng.unit_vector(stream, center.size());
    best = std::max(best, operator_norm(step_jacobian(denoiser, x, t, s)));
  }
  est.values.push_back(best);
  return est;
}

BoundReport check_cascaded_bound(const GuidedDenoiser& identity, const CascadedOptions& options) {
  const auto& schedule = identity.schedule();
  const int horizon = options.horizon == 0 ? schedule.steps() : options.horizon;
  if (horizon < 1 || horizon > schedule.steps()) throw DomainError("horizon out of range");
  if (options.init_error < 0.0) throw DomainError("initial error must be non-negative");
  const auto deltas = clean_deltas(options.deltas, horizon);
  const double s = options.guidance_scale;
  const Eigen::Index d = identity.conditional().at(0).dim();

  std::vector<TrialOutcome> outcomes(static_cast<std::size_t>(options.trials));
  std::vector<int> lipschitz_methods(outcomes.size(), 0);
  parallel_for(outcomes.size(), options.threads, [&](std::size_t trial) {
    const CounterRng rng = CounterRng(options.seed).derive("cascaded").derive(trial);
    std::vector<Vector> ideal(static_cast<std::size_t>(horizon) + 1);
    ideal[horizon] = identity.conditional().at(horizon).sample(rng, 0);
    for (int t = horizon; t >= 1; --t) ideal[t - 1] = guided_step(identity, ideal[t], t, s);

    // Directions of the injected errors.
    Vector init_dir = rng.unit_vector(1, d);
    std::vector<Vector> step_dir(static_cast<std::size_t>(horizon) + 1);
    for (int k = 1; k <= horizon; ++k) step_dir[k] = rng.unit_vector(100 + k, d);
    if (options.adversarial) {
      // prefix[k] = J_1 ... J_k maps an error at level k to level 0
      std::vector<Matrix> prefix(static_cast<std::size_t>(horizon) + 1);
      prefix[0] = Matrix::Identity(d, d);
      for (int k = 1; k <= horizon; ++k) {
        prefix[k] = prefix[k - 1] * step_jacobian(identity, ideal[k], k, s);
      }
      Eigen::JacobiSVD<Matrix> top(prefix[horizon], Eigen::ComputeFullV);
      init_dir = top.matrixV().col(0);
      const Vector out_dir = (prefix[horizon] * init_dir).normalized();
      step_dir[1] = out_dir;
      for (int k = 2; k <= horizon; ++k) {
        Eigen::JacobiSVD<Matrix> svd(prefix[k - 1], Eigen::ComputeFullV);
        Vector v = svd.matrixV().col(0);
        if ((prefix[k - 1] * v).dot(out_dir) < 0.0) v = -v;
        step_dir[k] = v;
      }
    }

    std::vector<Vector> approx(static_cast<std::size_t>(horizon) + 1);
    approx[horizon] = ideal[horizon] + options.init_error * init_dir;
    for (int t = horizon; t >= 1; --t) {
      approx[t - 1] = guided_step(identity, approx[t], t, s) + deltas[t - 1] * step_dir[t];
    }

    std::vector<double> lip(static_cast<std::size_t>(horizon) + 1, 0.0);
    for (int t = 1; t <= horizon; ++t) {
      const auto est = estimate_lipschitz(identity, ideal[t], approx[t], t, s, options.segments);
      lip[t] = est.values.front();
      lipschitz_methods[trial] = static_cast<int>(est.method);
    }
    double rhs = options.init_error;
    for (int t = 1; t <= horizon; ++t) rhs *= lip[t];
    double prefix_prod = 1.0;
    for (int k = 1; k <= horizon; ++k) {
      rhs += prefix_prod * deltas[k - 1];
      prefix_prod *= lip[k];
    }
    auto& o = outcomes[trial];
    o.lhs = (ideal[0] - approx[0]).norm();
    o.rhs = rhs;
    o.constants = {{"trial", trial},
                   {"L_t", std::vector<double>(lip.begin() + 1, lip.end())},
                   {"product_L", prefix_prod}};
  });

  BoundReport r = aggregate("cascaded_error", outcomes, options.tolerance,
                            required_for(options.trials, options.required_fraction));
  r.metadata["delta_t"] = deltas;
  r.metadata["e_T"] = options.init_error;
  r.metadata["horizon"] = horizon;
  r.metadata["adversarial"] = options.adversarial;
  r.metadata["lipschitz_method"] =
      !lipschitz_methods.empty() && lipschitz_methods.front() == 0 ? "analytic-affine"
                                                                   : "sampled-jacobian";
  if (options.adversarial) {
    double min_ratio = std::numeric_limits<double>::infinity();
    for (const auto& o : outcomes) {
      if (o.rhs > 0.0) min_ratio = std::min(min_ratio, o.lhs / o.rhs);
    }
    r.metadata["min_tightness"] = min_ratio;
  }
  return r;
}

GuidanceProbe guidance_difference(const GuidedDenoiser& denoiser, const Vector& x_t, int t,
                                  double s, double s_prime) {
  const auto& schedule = denoiser.schedule();
  const Vector hi = ddim_step({x_t, t}, cfg_eps(denoiser, x_t, t, s), schedule).x;
  const Vector lo = ddim_step({x_t, t}, cfg_eps(denoiser, x_t, t, s_prime), schedule).x;
  const auto clean = ddim_coefficients(schedule.alpha_bar(t - 1), schedule.alpha_bar(t));
  const Vector gap = denoiser.conditional().eps(x_t, t) - denoiser.unconditional().eps(x_t, t);
  return {(hi - lo).norm(), std::abs(clean.b) * std::abs(s - s_prime) * gap.norm()};
}

std::vector<BoundReport> check_guidance_amplification(const std::vector<GuidedDenoiser>& denoisers,
                                                      const GuidanceOptions& options) {
  if (denoisers.empty()) throw DomainError("need at least one conditioned denoiser");
  for (const auto& den : denoisers) {
    if (den.conditional().condition().kind() == Condition::Kind::Unconditional) {
      throw DomainError("guidance amplification needs a non-unconditional condition");
    }
  }
  const auto n = static_cast<std::size_t>(options.probes);
  std::vector<double> rel(n), raw_lhs(n), raw_rhs(n);
  std::vector<int> draws(n, 0);
  std::vector<TrialOutcome> pairs(n);
  parallel_for(n, options.threads, [&](std::size_t i) {
    const auto& den = denoisers[i % denoisers.size()];
    const auto& schedule = den.schedule();
    // Redraw until the guided difference stands well above the rounding
    // error of the step outputs; identical branches (rhs = 0) are exact.
    CounterRng rng = CounterRng(options.seed).derive("guidance").derive(i);
    int t = 1;
    Vector x;
    double s = 0.0, s_prime = 0.0;
    GuidanceProbe probe;
    for (int draw = 0; draw < kMaxProbeDraws; ++draw) {
      rng = CounterRng(options.seed).derive("guidance").derive(i).derive(draw);
      t = 1 + std::min(schedule.steps() - 1, static_cast<int>(rng.uniform(0, 0) * schedule.steps()));
      x = den.unconditional().at(t).sample(rng, 1);
      s = options.s_max * rng.uniform(0, 1);
      s_prime = options.s_max * rng.uniform(0, 2);
      probe = guidance_difference(den, x, t, s, s_prime);
      const double scale = std::abs(schedule.a(t)) * x.norm() +
                           std::abs(schedule.b(t)) * cfg_eps(den, x, t, s).norm();
      draws[i] = draw + 1;
      if (probe.rhs == 0.0 || probe.rhs >= kProbeConditioning * scale) break;
    }

    // part 1: exact linearity in the guidance scale
    raw_lhs[i] = probe.lhs;
    raw_rhs[i] = probe.rhs;
    rel[i] = probe.rhs > 0.0 ? std::abs(probe.lhs - probe.rhs) / probe.rhs
                             : (probe.lhs == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());

    // part 2: Lipschitz constant of the guided step
    const Vector other = x + options.pair_radius * rng.uniform(0, 3) * rng.unit_vector(2, x.size());
    const double lhs2 = (guided_step(den, x, t, s) - guided_step(den, other, t, s)).norm();
    double k_t = 0.0;
    const int points = den.affine() ? 0 : options.segments;
    for (int k = 0; k <= points; ++k) {
      const double w = points == 0 ? 0.0 : static_cast<double>(k) / points;
      const Vector p = (1.0 - w) * x + w * other;
      const Matrix ju = den.unconditional().eps_jacobian(p, t);
      const Matrix jc = den.conditional().eps_jacobian(p, t);
      if (den.affine()) {
        k_t = std::max({exact_spectral_norm(ju), exact_spectral_norm(jc),
                        exact_spectral_norm(jc - ju)});
      } else {
        k_t = std::max({k_t, operator_norm(ju), operator_norm(jc), operator_norm(jc - ju)});
      }
    }
    const auto clean = ddim_coefficients(schedule.alpha_bar(t - 1), schedule.alpha_bar(t));
    pairs[i].lhs = lhs2;
    pairs[i].rhs = (std::abs(clean.a) + std::abs(clean.b) * k_t * (1.0 + s)) * (x - other).norm();
    pairs[i].constants = {{"probe", i}, {"t", t}, {"s", s}, {"K_t", k_t}};
  });

  // Part 1 is reported as worst relative deviation (lhs) against the allowed
  // relative error (rhs).
  BoundReport eq;
  eq.name = "guidance_equality";
  eq.trials = eq.probes = options.probes;
  eq.required_count = options.probes;
  eq.tolerance = 0.0;
  std::size_t worst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rel[i] <= options.rel_tolerance) ++eq.satisfied_count;
    if (rel[i] > rel[worst]) worst = i;
  }
  eq.lhs = n ? rel[worst] : 0.0;
  eq.rhs = options.rel_tolerance;
  eq.slack = eq.rhs - eq.lhs;
  eq.satisfied = eq.slack >= 0.0;
  if (n) {
    eq.metadata["worst_probe"] = {{"probe", worst},
                                  {"step_difference", raw_lhs[worst]},
                                  {"b_ds_D", raw_rhs[worst]}};
  }
  eq.metadata["relative_tolerance"] = options.rel_tolerance;
  eq.metadata["probe_conditioning"] = kProbeConditioning;
  eq.metadata["probe_draws"] = std::accumulate(draws.begin(), draws.end(), 0);

  BoundReport lip = aggregate("guidance_lipschitz", pairs, 1e-12,
                              required_for(options.probes, options.required_fraction));
  return {eq, lip};
}

BoundReport check_locality_bound(const GuidedDenoiser& denoiser, const Vector& x_t, int t,
                                 double s, const RegionMask& mask, const Vector& anchor,
                                 const LocalityOptions& options) {
  const auto inside = mask.inside();
  const auto outside = mask.outside();
  if (inside.empty() || outside.empty()) {
    throw DomainError("locality check needs both mask regions non-empty");
  }
  if (options.radii.empty()) throw DomainError("locality check needs radii");
  std::vector<double> radii = options.radii;
  std::sort(radii.begin(), radii.end(), std::greater<>());

  const Vector base = guided_step(denoiser, x_t, t, s);
  const Matrix j_oi = block(step_jacobian(denoiser, x_t, t, s), outside, inside);
  SpectralNorm norm;
  if (j_oi.cols() <= kExactNormMaxDim) {
    Eigen::JacobiSVD<Matrix> svd(j_oi, Eigen::ComputeThinV);
    norm.value = svd.singularValues()(0);
    norm.right = svd.matrixV().col(0);
  } else {
    norm = spectral_norm(j_oi);
  }
  const CounterRng rng = CounterRng(options.seed).derive("locality");

  auto perturbed = [&](const Vector& dir_inside, double r) {
    Vector x = x_t;
    for (std::size_t k = 0; k < inside.size(); ++k) {
      x(inside[k]) += r * dir_inside(static_cast<Eigen::Index>(k));
    }
    return guided_step(denoiser, x, t, s);
  };
  auto leakage = [&](const Vector& stepped) { return gather(stepped - base, outside).norm(); };

  BoundReport r;
  r.name = "locality";
  r.trials = r.probes = static_cast<int>(radii.size());
  r.required_count = r.trials;
  nlohmann::json checks = nlohmann::json::object();

  // Hard locking: outside coordinates come from the anchor bit for bit.
  {
    const Vector dir = rng.unit_vector(0, static_cast<Eigen::Index>(inside.size()));
    const Vector stepped = perturbed(dir, radii.front());
    const Vector locked = masked_update(stepped, mask, Vector::Zero(x_t.size()), anchor, MaskMode::Hard);
    bool exact = true;
    for (auto i : outside) exact = exact && locked(i) == anchor(i);
    checks["hard_bit_exact"] = exact;
  }

  nlohmann::json sweep = nlohmann::json::array();
  r.metadata["J_OI_norm"] = norm.value;
  if (norm.value < options.zero_coupling) {
    r.metadata["branch"] = "zero-coupling";
    const Vector dir = rng.unit_vector(1, static_cast<Eigen::Index>(inside.size()));
    double worst = -std::numeric_limits<double>::infinity();
    for (double rad : radii) {
      const double leak = leakage(perturbed(dir, rad));
      const double bound = 1e-10 * rad;
      if (leak <= bound) ++r.satisfied_count;
      sweep.push_back({{"radius", rad}, {"leakage", leak}});
      if (leak - bound > worst) {
        worst = leak - bound;
        r.lhs = leak;
        r.rhs = bound;
      }
    }
  } else {
    r.metadata["branch"] = "ratio";
    std::vector<double> ratios;
    for (double rad : radii) {
      double ratio = 0.0;
      double leak = 0.0;
      for (double sign : {1.0, -1.0}) {
        const double l = leakage(perturbed(sign * norm.right, rad));
        if (l / (norm.value * rad) > ratio) {
          ratio = l / (norm.value * rad);
          leak = l;
        }
      }
      ratios.push_back(ratio);
      sweep.push_back({{"radius", rad}, {"leakage", leak}, {"ratio", ratio}});
    }
    double c_fit = 0.0;
    for (std::size_t i = 0; i < radii.size(); ++i) {
      c_fit = std::max(c_fit, std::max(0.0, ratios[i] - 1.0) / radii[i]);
    }
    r.metadata["first_order_constant"] = c_fit;
    const bool affine = denoiser.affine_at(s);
    bool monotone = true;
    for (std::size_t i = 0; i < radii.size(); ++i) {
      const double allowed = affine ? 1.0 + options.affine_tolerance : 1.0 + c_fit * radii[i];
      const bool ok = affine ? std::abs(ratios[i] - 1.0) <= options.affine_tolerance
                             : ratios[i] <= allowed + 1e-12;
      if (ok) ++r.satisfied_count;
      if (i > 0 && std::max(0.0, ratios[i] - 1.0) > std::max(0.0, ratios[i - 1] - 1.0) + 1e-9) {
        monotone = false;
      }
    }
    const double smallest = ratios.back();
    r.lhs = smallest;
    r.rhs = affine ? 1.0 + options.affine_tolerance : 1.0 + options.max_ratio_excess;
    checks["excess_non_increasing"] = monotone;
    checks["ratio_at_smallest_radius"] =
        affine ? std::abs(smallest - 1.0) <= options.affine_tolerance
               : smallest <= 1.0 + options.max_ratio_excess;
    r.metadata["affine"] = affine;
  }
  r.slack = r.rhs - r.lhs;
  r.satisfied = r.slack >= 0.0;
  r.metadata["sweep"] = std::move(sweep);
  r.metadata["checks"] = std::move(checks);
  r.metadata["t"] = t;
  r.metadata["guidance_scale"] = s;
  return r;
}

Matrix finite_difference_jacobian(const EditorMap& map, const Vector& x, double step) {
  const Eigen::Index d = x.size();
  Matrix j;
  for (Eigen::Index i = 0; i < d; ++i) {
    Vector up = x, down = x;
    up(i) += step;
    down(i) -= step;
    const Vector col = (map(up) - map(down)) / (2.0 * step);
    if (j.size() == 0) j.resize(col.size(), d);
    j.col(i) = col;
  }
  return j;
}

BoundReport check_drift_bound(const EditorMap& editor, const Vector& x_start,
                              const DriftOptions& options) {
  if (options.turns < 1) throw DomainError("drift check needs K >= 1");
  const auto errors = clean_deltas(options.error_norms, options.turns);
  const Eigen::Index d = x_start.size();
  const int K = options.turns;

  double affine_l = 0.0;
  if (options.affine) {
    affine_l = exact_spectral_norm(finite_difference_jacobian(editor, x_start, options.fd_step));
  }

  std::vector<TrialOutcome> outcomes(static_cast<std::size_t>(options.trials));
  std::vector<double> growth(outcomes.size(), 0.0), lips(outcomes.size(), 0.0);
  parallel_for(outcomes.size(), options.threads, [&](std::size_t trial) {
    const CounterRng rng = CounterRng(options.seed).derive("drift").derive(trial);
    Vector x = x_start;
    const Vector offset = options.init_error * rng.unit_vector(0, d);
    Vector ideal = x_start + offset;
    // error-free perturbed copy, for the pure growth ratio
    Vector free = ideal;
    double lip = affine_l;
    for (int k = 0; k < K; ++k) {
      if (!options.affine) {
        for (int p = 0; p <= options.segments; ++p) {
          const double w = static_cast<double>(p) / options.segments;
          const Vector at = (1.0 - w) * x + w * ideal;
          lip = std::max(lip, operator_norm(finite_difference_jacobian(editor, at, options.fd_step)));
        }
      }
      x = editor(x);
      ideal = editor(ideal) - errors[k] * rng.unit_vector(1 + k, d);
      if (options.check_growth) free = editor(free);
    }
    double rhs = std::pow(lip, K) * options.init_error;
    for (int k = 0; k < K; ++k) rhs += std::pow(lip, K - 1 - k) * errors[k];
    auto& o = outcomes[trial];
    o.lhs = (x - ideal).norm();
    o.rhs = rhs;
    o.constants = {{"trial", trial}, {"L", lip}};
    if (options.check_growth && options.init_error > 0.0) {
      growth[trial] = (x - free).norm() / options.init_error;
    }
    lips[trial] = lip;
  });

  BoundReport r = aggregate("cumulative_drift", outcomes, options.tolerance, options.trials);
  const double l_max = lips.empty() ? 0.0 : *std::max_element(lips.begin(), lips.end());
  r.metadata["L"] = l_max;
  r.metadata["K"] = K;
  r.metadata["e_0"] = options.init_error;
  r.metadata["eps_k"] = errors;
  r.metadata["regime"] = std::abs(l_max - 1.0) <= 1e-6 ? "neutral" : (l_max < 1.0 ? "contractive" : "expansive");
  r.metadata["lipschitz_method"] = options.affine ? "analytic-affine" : "sampled-jacobian";

  nlohmann::json checks = nlohmann::json::object();
  const double eps_bar = errors.empty() ? 0.0 : *std::max_element(errors.begin(), errors.end());
  if (l_max < 1.0) {
    // geometric-series envelope sum_j L^j eps_bar on top of the decayed e_0 term
    bool ok = true;
    double geometric = 0.0;
    for (int j = 0; j < K; ++j) geometric += std::pow(l_max, j) * eps_bar;
    for (const auto& o : outcomes) {
      ok = ok && o.lhs <= std::pow(l_max, K) * options.init_error + geometric + options.tolerance;
    }
    checks["geometric_series"] = ok;
    r.metadata["geometric_limit"] = eps_bar / (1.0 - l_max);
  }
  if (options.check_growth) {
    const double target = std::pow(l_max, K);
    bool ok = true;
    for (double g : growth) ok = ok && g >= 0.5 * target && g <= 2.0 * target;
    checks["growth_within_factor_2"] = ok;
    r.metadata["L_pow_K"] = target;
    r.metadata["growth_ratio_min"] = *std::min_element(growth.begin(), growth.end());
    r.metadata["growth_ratio_max"] = *std::max_element(growth.begin(), growth.end());
  }
  r.metadata["checks"] = std::move(checks);
  return r;
}

}  // namespace editlab
