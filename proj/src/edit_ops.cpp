#include "editlab/edit_ops.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "editlab/errors.hpp"
#include "editlab/format.hpp"

namespace editlab {

namespace {

constexpr double kDragFdStep = 1e-4;
constexpr int kMaxHalvings = 20;
constexpr double kDragBlowup = 1e6;
constexpr int kMaxTurns = 16;

nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.begin(), v.end()); }

nlohmann::json trajectory_json(const Trajectory& t) {
  auto states = nlohmann::json::array();
  for (const auto& s : t.states) states.push_back({{"t", s.t}, {"x", vec_json(s.x)}});
  return {{"direction", t.direction == Direction::Forward ? "forward" : "reverse"},
          {"condition", t.condition},
          {"guidance_scale", t.guidance_scale},
          {"states", std::move(states)}};
}

}  // namespace

void DragSpec::validate(Eigen::Index dim) const {
  for (const auto& p : pairs) {
    if (p.handle == p.target) throw DomainError("drag handle and target must differ");
    if (p.handle < 0 || p.handle >= dim || p.target < 0 || p.target >= dim) {
      throw DomainError("drag index out of range");
    }
  }
  if (window_radius < 0) throw DomainError("window radius must be >= 0");
  if (iters < 0 || iters > 500) throw DomainError("drag iterations must lie in 0..500");
  if (!(step_size > 0.0)) throw DomainError("drag step size must be positive");
  if (beta < 0.0 || gamma < 0.0) throw DomainError("drag weights must be non-negative");
}

void EditRequest::validate() const {
  if (!instruction && !drag) throw ConfigError("edit request needs an instruction or a drag");
}

void ObjectiveWeights::validate() const {
  if (faith < 0.0 || pres < 0.0 || qual < 0.0 || stab < 0.0) {
    throw ConfigError("objective weights must be non-negative");
  }
  if (faith == 0.0 && pres == 0.0 && qual == 0.0 && stab == 0.0) {
    throw ConfigError("objective weights are all zero");
  }
}

ObjectiveTerms edit_objective(const Vector& x0_hat, const Vector& x0, const EditRequest& request,
                              const ObjectiveWeights& weights, const ObjectiveContext& ctx) {
  weights.validate();
  if (x0_hat.size() != x0.size()) throw DomainError("objective: dimension mismatch");
  if (!ctx.model) throw ConfigError("objective needs a model");
  ObjectiveTerms t;
  if (weights.faith > 0.0) {
    if (!request.instruction) throw ConfigError("faithfulness term needs an instruction");
    t.faith = -faithfulness(x0_hat, *request.instruction, *ctx.model);
  }
  if (weights.pres > 0.0) {
    const RegionMask* mask = request.mask ? &*request.mask : ctx.inferred_mask;
    if (!mask) throw ConfigError("preservation term needs a mask");
    t.pres = mask->complement_weights().cwiseProduct(x0_hat - x0).squaredNorm();
  }
  if (weights.qual > 0.0) t.qual = quality_nll(x0_hat, *ctx.model);
  if (weights.stab > 0.0 && ctx.displacement) t.stab = ctx.displacement->squaredNorm();
  t.total = weights.faith * t.faith + weights.pres * t.pres + weights.qual * t.qual +
            weights.stab * t.stab;
  return t;
}

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::None:
      return "none";
    case MaskMode::Soft:
      return "soft";
    case MaskMode::Hard:
      return "hard";
  }
  return "none";
}

MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "none") return MaskMode::None;
  if (s == "soft") return MaskMode::Soft;
  if (s == "hard") return MaskMode::Hard;
  throw ConfigError("unknown mask mode '" + s + "'");
}

Vector masked_update(const Vector& x_t, const RegionMask& mask, const Vector& delta,
                     const Vector& anchor, MaskMode mode, double preservation) {
  if (x_t.size() != mask.dim() || delta.size() != mask.dim() || anchor.size() != mask.dim()) {
    throw DomainError("masked update: dimension mismatch");
  }
  Vector out(x_t.size());
  for (Eigen::Index i = 0; i < x_t.size(); ++i) {
    if (mask.editable(i)) {
      out(i) = x_t(i) + delta(i);
    } else if (mode == MaskMode::Hard) {
      out(i) = anchor(i);
    } else if (preservation > 0.0) {
      out(i) = (x_t(i) + preservation * anchor(i)) / (1.0 + preservation);
    } else {
      out(i) = x_t(i);
    }
  }
  return out;
}

AnchorTrajectory::AnchorTrajectory(const Vector& x0, int t0, const NoiseSchedule& schedule,
                                   const CounterRng& rng) {
  if (t0 < 0 || t0 > schedule.steps()) throw DomainError("anchor level out of range");
  states_.reserve(static_cast<std::size_t>(t0) + 1);
  for (int t = 0; t <= t0; ++t) states_.push_back(forward_noise(x0, t, schedule, rng).x);
}

const Vector& AnchorTrajectory::at(int t) const {
  if (t < 0 || t > top()) throw DomainError("anchor level out of range");
  return states_[static_cast<std::size_t>(t)];
}

void StabilityPolicy::validate() const {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
  if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (!(guidance_factor > 0.0 && guidance_factor <= 1.0) ||
      !(noise_factor > 0.0 && noise_factor <= 1.0) || preservation_factor < 1.0) {
    throw ConfigError("retry multipliers must make the edit more conservative");
  }
}

nlohmann::json EditReport::to_json(bool include_trajectories) const {
  nlohmann::json j = {{"mode", to_string(mode)},
                      {"params",
                       {{"guidance_scale", params.guidance_scale},
                        {"noise_level", params.noise_level},
                        {"steps", params.effective_steps()},
                        {"seed", params.seed}}},
                      {"preservation", preservation},
                      {"source", source},
                      {"target", target},
                      {"metrics", metrics.to_json()},
                      {"timing", {{"reverse_steps", reverse_steps},
                                  {"inversion_levels", inversion_levels}}}};
  if (include_trajectories) {
    j["inversion"] = trajectory_json(inversion);
    j["reverse"] = trajectory_json(reverse);
  }
  return j;
}

std::string DragResult::history_csv() const {
  std::string out = "iteration,L_drag,L_pres,L_reg,total\n";
  for (const auto& h : history) {
    out += std::to_string(h.iteration) + ',' + format_double(h.drag) + ',' +
           format_double(h.pres) + ',' + format_double(h.reg) + ',' + format_double(h.total) +
           '\n';
  }
  return out;
}

nlohmann::json DragResult::to_json() const {
  return {{"x0_hat", vec_json(x0_hat)},
          {"xi_init", vec_json(xi_init)},
          {"xi_final", vec_json(xi_final)},
          {"iterations", iterations},
          {"stalled", stalled},
          {"initial_drag", history.empty() ? 0.0 : history.front().drag},
          {"final_drag", history.empty() ? 0.0 : history.back().drag}};
}

std::string MultiTurnResult::records_csv() const {
  std::string out = "turn,faithfulness,consistency,stability,drift,retried,artifact\n";
  for (const auto& r : records) {
    out += std::to_string(r.turn) + ',' + format_double(r.metrics.faithfulness) + ',' +
           format_double(r.metrics.consistency) + ',' + format_double(r.stability) + ',' +
           format_double(r.drift) + ',' + (r.retried ? "1" : "0") + ',' +
           (r.artifact ? "1" : "0") + '\n';
  }
  return out;
}

nlohmann::json MultiTurnResult::to_json() const {
  auto turns = nlohmann::json::array();
  for (const auto& r : records) {
    turns.push_back({{"turn", r.turn},
                     {"image", vec_json(r.image)},
                     {"metrics", r.metrics.to_json()},
                     {"stability", r.stability},
                     {"drift", r.drift},
                     {"retried", r.retried},
                     {"attempts", r.attempts},
                     {"artifact", r.artifact},
                     {"guidance_scale", r.guidance_scale},
                     {"noise_level", r.noise_level}});
  }
  return {{"final_image", vec_json(final_image)},
          {"unstable", unstable},
          {"stab", summary.stab},
          {"art", summary.art},
          {"turns", std::move(turns)}};
}

Editor::Editor(MixtureModel model, NoiseSchedule schedule, EditorOptions options)
    : model_(std::move(model)),
      schedule_(std::move(schedule)),
      options_(options),
      probe_(model_.dim(), options.probe_seed) {
  if (options_.refine_iters < 0) throw ConfigError("refine_iters must be >= 0");
}

Condition Editor::identity_condition(const std::string& source_label) const {
  return Condition::identity(model_, source_label, options_.identity);
}

EditResult Editor::invert_and_edit(const Vector& x0, const std::string& source_label,
                                   const EditRequest& request, const EditParams& params,
                                   MaskMode mode, double preservation) const {
  request.validate();
  if (!request.instruction) throw ConfigError("invert_and_edit needs an instruction");
  params.validate(schedule_);
  if (x0.size() != model_.dim()) throw DomainError("input dimension mismatch");
  if (request.mask && request.mask->dim() != model_.dim()) {
    throw DomainError("mask dimension mismatch");
  }

  const int t0 = params.noise_level;
  const double s = params.guidance_scale;
  const Condition id_cond = identity_condition(source_label);
  const GuidedDenoiser identity(model_, id_cond, schedule_);
  const GuidedDenoiser edit(model_, *request.instruction, schedule_);

  EditResult out;
  out.report.mode = mode;
  out.report.params = params;
  out.report.preservation = preservation;
  out.report.source = id_cond.describe();
  out.report.target = request.instruction->describe();
  out.report.inversion = ddim_invert(x0, identity.conditional(), t0, options_.refine_iters);
  out.report.inversion_levels = t0;

  const bool masked = request.mask && mode != MaskMode::None;
  std::optional<AnchorTrajectory> anchor;
  if (masked) anchor.emplace(x0, t0, schedule_, CounterRng(params.seed).derive("anchor"));

  StepHooks hooks;
  if (masked) {
    hooks.on_state = [&](int t, const Vector& x_t, Vector& x_prev) {
      const Vector base = guided_step(identity, x_t, t, 1.0);
      x_prev = masked_update(base, *request.mask, x_prev - base, anchor->at(t - 1), mode,
                             preservation);
    };
  }

  const int stop = t0 - params.effective_steps();
  auto run = reverse_run(out.report.inversion.back(), edit, s, hooks, stop);
  out.report.reverse_steps = t0 - stop;
  out.x0_hat = std::move(run.x0_hat);
  if (stop > 0) {
    out.x0_hat = predict_x0(edit, out.x0_hat, stop, s);
    if (masked && mode == MaskMode::Hard) {
      out.x0_hat = masked_update(out.x0_hat, *request.mask, Vector::Zero(x0.size()), x0, mode);
    }
  }
  out.report.reverse = std::move(run.trajectory);
  out.report.metrics = evaluate_metrics(out.x0_hat, x0, model_, *request.instruction, id_cond,
                                        request.mask ? &*request.mask : nullptr, probe_);
  return out;
}

std::vector<Eigen::Index> drag_window(const DragPair& pair, int radius, Eigen::Index dim,
                                      bool around_target) {
  std::vector<Eigen::Index> idx;
  for (int o = -radius; o <= radius; ++o) {
    const Eigen::Index h = pair.handle + o;
    const Eigen::Index g = pair.target + o;
    if (h < 0 || h >= dim || g < 0 || g >= dim) continue;
    idx.push_back(around_target ? g : h);
  }
  return idx;
}

DragResult Editor::drag_edit(const Vector& x0, const std::string& source_label,
                             const DragSpec& spec, const EditParams& params,
                             const RegionMask* mask) const {
  const Eigen::Index d = model_.dim();
  spec.validate(d);
  params.validate(schedule_);
  if (x0.size() != d) throw DomainError("input dimension mismatch");

  const int t0 = params.noise_level;
  const int t_mid = (t0 + 3) / 4;
  const double s = params.guidance_scale;
  const GuidedDenoiser identity(model_, identity_condition(source_label), schedule_);

  DragResult out;
  out.xi_init = ddim_invert(x0, identity.conditional(), t0, options_.refine_iters).back().x;

  auto full_decode = [&](const Vector& xi) {
    return reverse_run({xi, t0}, identity, s).x0_hat;
  };
  if (spec.pairs.empty()) {
    out.xi_final = out.xi_init;
    out.x0_hat = full_decode(out.xi_init);
    return out;
  }

  auto partial_decode = [&](const Vector& xi) -> Vector {
    Vector x = xi;
    if (t_mid < t0) x = reverse_run({xi, t0}, identity, s, {}, t_mid).x0_hat;
    return predict_x0(identity, x, t_mid, s);
  };

  // Preserved region: the explicit mask, or everything outside the windows.
  RegionMask pres_mask;
  if (mask) {
    pres_mask = *mask;
  } else {
    std::vector<bool> bits(static_cast<std::size_t>(d), false);
    for (const auto& p : spec.pairs) {
      for (auto i : drag_window(p, spec.window_radius, d, false)) bits[i] = true;
      for (auto i : drag_window(p, spec.window_radius, d, true)) bits[i] = true;
    }
    pres_mask = RegionMask(std::move(bits));
  }
  const Vector keep = pres_mask.complement_weights();

  struct Windows {
    std::vector<Eigen::Index> handle, target;
  };
  std::vector<Windows> windows;
  for (const auto& p : spec.pairs) {
    windows.push_back({drag_window(p, spec.window_radius, d, false),
                       drag_window(p, spec.window_radius, d, true)});
  }

  auto evaluate = [&](const Vector& xi) {
    const Vector x_hat = partial_decode(xi);
    DragIteration it;
    for (const auto& w : windows) {
      const Vector moved = gather(x_hat, w.target);
      const Vector ref = spec.variant == DragVariant::ReferenceAnchored ? gather(x0, w.handle)
                                                                        : gather(x_hat, w.handle);
      it.drag += (moved - ref).squaredNorm();
    }
    it.pres = keep.cwiseProduct(x_hat - x0).squaredNorm();
    it.reg = (xi - out.xi_init).squaredNorm();
    it.total = it.drag + spec.beta * it.pres + spec.gamma * it.reg;
    return it;
  };

  Vector xi = out.xi_init;
  DragIteration current = evaluate(xi);
  out.history.push_back(current);

  for (int n = 1; n <= spec.iters; ++n) {
    Vector grad(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      Vector up = xi, down = xi;
      up(i) += kDragFdStep;
      down(i) -= kDragFdStep;
      grad(i) = (evaluate(up).total - evaluate(down).total) / (2.0 * kDragFdStep);
    }
    if (!grad.allFinite()) throw NumericalError("non-finite drag gradient");
    if (grad.norm() == 0.0) {
      out.stalled = true;
      break;
    }

    double eta = spec.step_size;
    bool accepted = false;
    Vector candidate;
    DragIteration next;
    for (int h = 0; h <= (spec.line_search ? kMaxHalvings : 0); ++h, eta *= 0.5) {
      candidate = xi - eta * grad;
      next = evaluate(candidate);
      if (!spec.line_search || next.total < current.total) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.stalled = true;
      break;
    }
    if (!std::isfinite(next.total) || next.total > kDragBlowup) {
      throw DivergenceError("drag loss exceeded 1e6 at iteration " + std::to_string(n));
    }
    xi = std::move(candidate);
    current = next;
    current.iteration = n;
    out.history.push_back(current);
    out.iterations = n;
  }

  out.xi_final = xi;
  out.x0_hat = full_decode(xi);
  return out;
}

MultiTurnResult Editor::iterative_edit(const Vector& x0, const std::string& source_label,
                                       const std::vector<EditRequest>& requests,
                                       const EditParams& params, MaskMode mode,
                                       const StabilityPolicy& policy,
                                       const ArtifactThreshold& threshold,
                                       double preservation) const {
  if (requests.empty() || requests.size() > kMaxTurns) {
    throw ConfigError("multi-turn editing needs 1..16 turns");
  }
  policy.validate();
  params.validate(schedule_);

  // Non-target content: coordinates no turn is allowed to edit.
  std::optional<RegionMask> edited;
  for (const auto& r : requests) {
    if (!r.mask) continue;
    edited = edited ? edited->united(*r.mask) : *r.mask;
  }
  const RegionMask region = edited ? *edited : RegionMask::all(model_.dim(), false);
  const Vector keep = region.complement_weights();

  MultiTurnResult out;
  {
    TurnRecord first;
    first.image = x0;
    const Condition src = identity_condition(source_label);
    first.metrics = evaluate_metrics(x0, x0, model_, src, src, &region, probe_);
    first.artifact = first.metrics.quality_nll > threshold.value;
    out.records.push_back(std::move(first));
  }

  Vector current = x0;
  std::string source = source_label;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& req = requests[i];
    EditParams p = params;
    double pres = preservation;

    auto attempt = [&] {
      auto res = invert_and_edit(current, source, req, p, mode, pres);
      const double sim = consistency(res.x0_hat, current, region, probe_).value;
      return std::make_pair(std::move(res), sim);
    };

    auto [best, best_sim] = attempt();
    EditParams best_params = p;
    int attempts = 1;
    bool retried = false;
    while (best_sim < policy.threshold && attempts <= policy.max_retries) {
      p.guidance_scale *= policy.guidance_factor;
      p.noise_level = std::max(1, static_cast<int>(std::ceil(policy.noise_factor * p.noise_level)));
      p.steps = std::min(p.steps, p.noise_level);
      pres *= policy.preservation_factor;
      retried = true;
      ++attempts;
      auto [res, sim] = attempt();
      if (sim > best_sim) {
        best = std::move(res);
        best_sim = sim;
        best_params = p;
      }
    }
    if (best_sim < policy.threshold) out.unstable = true;

    current = best.x0_hat;
    if (req.instruction && req.instruction->kind() == Condition::Kind::Concept) {
      source = req.instruction->label();
    }

    TurnRecord rec;
    rec.turn = static_cast<int>(i) + 1;
    rec.image = current;
    rec.metrics = best.report.metrics;
    rec.stability = best_sim;
    rec.drift = keep.cwiseProduct(current - x0).norm();
    rec.retried = retried;
    rec.attempts = attempts;
    rec.artifact = rec.metrics.quality_nll > threshold.value;
    rec.guidance_scale = best_params.guidance_scale;
    rec.noise_level = best_params.noise_level;
    out.records.push_back(std::move(rec));
  }
  out.final_image = current;
  out.summary = stability_and_artifacts(out.records, threshold, region, probe_);
  return out;
}

}  // namespace editlab
