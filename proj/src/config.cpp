#include "editlab/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "editlab/errors.hpp"

namespace editlab {

namespace {

using nlohmann::json;

constexpr int kMaxExtendsDepth = 8;

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::optional<Vector> opt_vector(const json& j, const char* key, Eigen::Index dim) {
  if (!j.contains(key)) return std::nullopt;
  const auto v = j.at(key).get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != dim) {
    throw ConfigError(std::string(key) + " must have length " + std::to_string(dim));
  }
  return Eigen::Map<const Vector>(v.data(), dim);
}

std::optional<RegionMask> opt_mask(const json& j, Eigen::Index dim) {
  if (!j.contains("mask")) return std::nullopt;
  return RegionMask::from_json(j.at("mask"), dim);
}

void require_label(const MixtureModel& model, const std::string& label, const char* where) {
  if (label.empty()) throw ConfigError(std::string(where) + ": label is required");
  if (!model.has_label(label)) {
    throw ConfigError(std::string(where) + ": unknown label '" + label + "'");
  }
}

void require_fraction(double f, const char* where) {
  if (!(f > 0.0 && f <= 1.0)) throw ConfigError(std::string(where) + " must lie in (0, 1]");
}

// guidance scales far outside the studied range are almost always typos
void require_scale(double s, const char* where) {
  if (!(s >= 0.0 && s <= kMaxGuidanceScale)) {
    throw ConfigError(std::string(where) + " must lie in [0, " + std::to_string(int(kMaxGuidanceScale)) + "]");
  }
}

InputSpec parse_input(const json& j, const MixtureModel& model, const char* where) {
  InputSpec in;
  in.source = j.at("source").get<std::string>();
  require_label(model, in.source, where);
  in.x0 = opt_vector(j, "input", model.dim());
  return in;
}

MaskMode parse_mode(const json& j, MaskMode fallback) {
  if (!j.contains("mode")) return fallback;
  try {
    return mask_mode_from_string(j.at("mode").get<std::string>());
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

std::vector<double> broadcast(const json& j, const char* key) {
  if (!j.contains(key)) return {};
  const auto& v = j.at(key);
  if (v.is_number()) return {v.get<double>()};
  return v.get<std::vector<double>>();
}

ObjectiveWeights parse_weights(const json& j) {
  ObjectiveWeights w;
  if (!j.contains("weights")) return w;
  const auto& wj = j.at("weights");
  w.faith = get_or(wj, "faith", w.faith);
  w.pres = get_or(wj, "pres", w.pres);
  w.qual = get_or(wj, "qual", w.qual);
  w.stab = get_or(wj, "stab", w.stab);
  w.validate();
  return w;
}

EditSection parse_edit(const json& j, const MixtureModel& model) {
  EditSection e;
  e.input = parse_input(j, model, "edit");
  e.target = j.at("target").get<std::string>();
  require_label(model, e.target, "edit.target");
  e.mask = opt_mask(j, model.dim());
  e.guidance_scale = get_or(j, "s", e.guidance_scale);
  require_scale(e.guidance_scale, "edit.s");
  e.t0_fraction = get_or(j, "t0_fraction", e.t0_fraction);
  require_fraction(e.t0_fraction, "edit.t0_fraction");
  e.steps = get_or(j, "steps", e.steps);
  e.mode = parse_mode(j, e.mask ? MaskMode::Soft : MaskMode::None);
  if (e.mode != MaskMode::None && !e.mask) throw ConfigError("edit: mask mode needs a mask");
  e.preservation = get_or(j, "preservation", e.preservation);
  e.weights = parse_weights(j);
  return e;
}

SweepSection parse_sweep(const json& j) {
  SweepSection s;
  s.s_grid = get_or(j, "s", s.s_grid);
  s.t0_fractions = get_or(j, "t0_fractions", s.t0_fractions);
  s.seeds = get_or(j, "seeds", s.seeds);
  if (s.s_grid.empty() || s.t0_fractions.empty()) throw ConfigError("sweep grids must be non-empty");
  for (double v : s.s_grid) require_scale(v, "sweep.s");
  for (double f : s.t0_fractions) require_fraction(f, "sweep.t0_fractions");
  if (s.seeds < 1) throw ConfigError("sweep.seeds must be positive");
  return s;
}

MultiturnSection parse_multiturn(const json& j, const MixtureModel& model) {
  MultiturnSection m;
  m.source = j.at("source").get<std::string>();
  require_label(model, m.source, "multiturn.source");
  for (const auto& tj : j.at("turns")) {
    TurnSpec t;
    t.target = tj.at("target").get<std::string>();
    require_label(model, t.target, "multiturn.turns");
    t.mask = opt_mask(tj, model.dim());
    m.turns.push_back(std::move(t));
  }
  if (m.turns.empty()) throw ConfigError("multiturn.turns must be non-empty");
  m.guidance_scale = get_or(j, "s", m.guidance_scale);
  require_scale(m.guidance_scale, "multiturn.s");
  m.t0_fraction = get_or(j, "t0_fraction", m.t0_fraction);
  require_fraction(m.t0_fraction, "multiturn.t0_fraction");
  m.mode = parse_mode(j, MaskMode::Soft);
  m.preservation = get_or(j, "preservation", m.preservation);
  m.seeds = get_or(j, "seeds", m.seeds);
  if (m.seeds < 1) throw ConfigError("multiturn.seeds must be positive");
  m.artifact_samples = get_or(j, "artifact_samples", m.artifact_samples);
  if (j.contains("policy")) {
    const auto& pj = j.at("policy");
    auto& p = m.policy;
    p.threshold = get_or(pj, "threshold", p.threshold);
    p.max_retries = get_or(pj, "max_retries", p.max_retries);
    p.guidance_factor = get_or(pj, "guidance_factor", p.guidance_factor);
    p.noise_factor = get_or(pj, "noise_factor", p.noise_factor);
    p.preservation_factor = get_or(pj, "preservation_factor", p.preservation_factor);
  }
  try {
    m.policy.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return m;
}

DragSection parse_drag(const json& j, const MixtureModel& model) {
  DragSection d;
  d.input = parse_input(j, model, "drag");
  for (const auto& pj : j.at("pairs")) {
    d.spec.pairs.push_back({pj.at(0).get<Eigen::Index>(), pj.at(1).get<Eigen::Index>()});
  }
  auto& s = d.spec;
  s.window_radius = get_or(j, "window_radius", s.window_radius);
  s.iters = get_or(j, "iters", s.iters);
  s.step_size = get_or(j, "step_size", s.step_size);
  s.beta = get_or(j, "beta", s.beta);
  s.gamma = get_or(j, "gamma", s.gamma);
  s.line_search = get_or(j, "line_search", s.line_search);
  const auto variant = get_or<std::string>(j, "variant", "reference-anchored");
  if (variant == "reference-anchored") {
    s.variant = DragVariant::ReferenceAnchored;
  } else if (variant == "paper-literal") {
    s.variant = DragVariant::PaperLiteral;
  } else {
    throw ConfigError("drag.variant must be reference-anchored or paper-literal");
  }
  try {
    s.validate(model.dim());
  } catch (const DomainError& e) {
    throw ConfigError(std::string("drag: ") + e.what());
  }
  d.t0_fraction = get_or(j, "t0_fraction", d.t0_fraction);
  require_fraction(d.t0_fraction, "drag.t0_fraction");
  d.mask = opt_mask(j, model.dim());
  return d;
}

VerifySection parse_verify(const json& j, const MixtureModel& model) {
  VerifySection v;
  if (j.contains("cascaded")) {
    const auto& cj = j.at("cascaded");
    CascadedSection c;
    c.source = cj.at("source").get<std::string>();
    require_label(model, c.source, "verify.cascaded.source");
    c.trials = get_or(cj, "trials", c.trials);
    c.init_error = get_or(cj, "e_T", c.init_error);
    c.deltas = broadcast(cj, "delta");
    c.adversarial = get_or(cj, "adversarial", c.adversarial);
    c.min_tightness = get_or(cj, "min_tightness", c.min_tightness);
    c.required_fraction = get_or(cj, "required_fraction", c.required_fraction);
    v.cascaded = c;
  }
  if (j.contains("guidance")) {
    const auto& gj = j.at("guidance");
    GuidanceSection g;
    g.labels = get_or(gj, "labels", g.labels);
    for (const auto& l : g.labels) require_label(model, l, "verify.guidance.labels");
    g.probes = get_or(gj, "probes", g.probes);
    g.s_max = get_or(gj, "s_max", g.s_max);
    g.required_fraction = get_or(gj, "required_fraction", g.required_fraction);
    v.guidance = g;
  }
  if (j.contains("locality")) {
    const auto& lj = j.at("locality");
    LocalitySection l;
    l.target = lj.at("target").get<std::string>();
    require_label(model, l.target, "verify.locality.target");
    l.guidance_scale = get_or(lj, "s", l.guidance_scale);
    require_scale(l.guidance_scale, "verify.locality.s");
    l.t_fraction = get_or(lj, "t_fraction", l.t_fraction);
    require_fraction(l.t_fraction, "verify.locality.t_fraction");
    l.point = get_or(lj, "point", l.point);
    if (l.point != "sample" && l.point != "boundary") {
      throw ConfigError("verify.locality.point must be sample or boundary");
    }
    if (l.point == "boundary") {
      l.boundary_other = lj.at("other").get<std::string>();
      require_label(model, l.boundary_other, "verify.locality.other");
    }
    auto mask = opt_mask(lj, model.dim());
    if (!mask) throw ConfigError("verify.locality.mask is required");
    if (mask->degenerate()) throw ConfigError("verify.locality.mask needs both regions");
    l.mask = *mask;
    l.radii = get_or(lj, "radii", l.radii);
    if (l.radii.empty()) throw ConfigError("verify.locality.radii must be non-empty");
    v.locality = l;
  }
  if (j.contains("drift")) {
    const auto& dj = j.at("drift");
    DriftSection d;
    d.source = dj.at("source").get<std::string>();
    d.target = dj.at("target").get<std::string>();
    require_label(model, d.source, "verify.drift.source");
    require_label(model, d.target, "verify.drift.target");
    d.guidance_scale = get_or(dj, "s", d.guidance_scale);
    require_scale(d.guidance_scale, "verify.drift.s");
    d.t0_fraction = get_or(dj, "t0_fraction", d.t0_fraction);
    require_fraction(d.t0_fraction, "verify.drift.t0_fraction");
    d.turns = get_or(dj, "K", d.turns);
    d.trials = get_or(dj, "trials", d.trials);
    d.init_error = get_or(dj, "e_0", d.init_error);
    d.error_norms = broadcast(dj, "eps");
    d.affine = get_or(dj, "affine", d.affine);
    d.check_growth = get_or(dj, "check_growth", d.check_growth);
    v.drift = d;
  }
  return v;
}

json resolve_extends(json doc, int depth) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  if (!doc.contains("extends")) return doc;
  if (depth >= kMaxExtendsDepth) throw ConfigError("config extends chain too deep");
  const auto base_name = doc.at("extends").get<std::string>();
  const char* text = builtin_profile_text(base_name);
  if (!text) throw ConfigError("unknown base profile '" + base_name + "'");
  json base = resolve_extends(json::parse(text), depth + 1);
  doc.erase("extends");
  base.merge_patch(doc);
  return base;
}

}  // namespace

NoiseSchedule ScheduleSpec::build() const {
  NoiseSchedule s = NoiseSchedule::linear(steps, beta_start, beta_end);
  return a_scale == 1.0 ? s : s.with_corrupted_signal_ratio(a_scale);
}

int ExperimentConfig::level(double fraction) const {
  return std::max(1, static_cast<int>(std::ceil(fraction * schedule.steps - 1e-9)));
}

ExperimentConfig parse_config(const json& input) {
  try {
    const json doc = resolve_extends(input, 0);
    ExperimentConfig cfg(MixtureModel::from_json(doc.at("model")));
    cfg.raw = doc;
    cfg.name = get_or<std::string>(doc, "name", "");
    cfg.seed = get_or<std::uint64_t>(doc, "seed", 0);
    if (doc.contains("schedule")) {
      const auto& sj = doc.at("schedule");
      cfg.schedule.steps = get_or(sj, "T", cfg.schedule.steps);
      cfg.schedule.beta_start = get_or(sj, "beta_start", cfg.schedule.beta_start);
      cfg.schedule.beta_end = get_or(sj, "beta_end", cfg.schedule.beta_end);
      cfg.schedule.a_scale = get_or(sj, "a_scale", cfg.schedule.a_scale);
    }
    cfg.schedule.build();  // surfaces schedule errors at load time
    const auto identity = get_or<std::string>(doc, "identity", "source");
    if (identity == "source") {
      cfg.identity = IdentityResolution::Source;
    } else if (identity == "unconditional") {
      cfg.identity = IdentityResolution::Unconditional;
    } else {
      throw ConfigError("identity must be source or unconditional");
    }
    cfg.refine_iters = get_or(doc, "refine_iters", cfg.refine_iters);
    if (cfg.refine_iters < 0) throw ConfigError("refine_iters must be non-negative");
    if (doc.contains("edit")) cfg.edit = parse_edit(doc.at("edit"), cfg.model);
    if (doc.contains("sweep")) cfg.sweep = parse_sweep(doc.at("sweep"));
    if (doc.contains("multiturn")) cfg.multiturn = parse_multiturn(doc.at("multiturn"), cfg.model);
    if (doc.contains("drag")) cfg.drag = parse_drag(doc.at("drag"), cfg.model);
    if (doc.contains("verify")) cfg.verify = parse_verify(doc.at("verify"), cfg.model);
    return cfg;
  } catch (const ConfigError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  json doc;
  try {
    doc = json::parse(text.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

ExperimentConfig load_profile(const std::string& name) {
  const char* text = builtin_profile_text(name);
  if (!text) throw ConfigError("unknown profile '" + name + "'");
  return parse_config(json::parse(text));
}

}  // namespace editlab
