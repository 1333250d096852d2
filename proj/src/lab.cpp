#include "editlab/lab.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "editlab/errors.hpp"
#include "editlab/format.hpp"
#include "editlab/parallel.hpp"

namespace editlab {

namespace {

using nlohmann::json;

json vec_json(const Vector& v) { return std::vector<double>(v.begin(), v.end()); }

std::vector<double> per_level(const std::vector<double>& given, int n) {
  if (given.size() == 1) return std::vector<double>(static_cast<std::size_t>(n), given.front());
  return given;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("failed writing " + path.string());
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::vector<BoundReport> verify_cascaded(const ExperimentConfig& cfg, const CascadedSection& c,
                                         const NoiseSchedule& schedule, unsigned threads) {
  const GuidedDenoiser identity(cfg.model, Condition::identity(cfg.model, c.source, cfg.identity),
                                schedule);
  CascadedOptions opts;
  opts.horizon = schedule.steps();
  opts.deltas = per_level(c.deltas, opts.horizon);
  opts.init_error = c.init_error;
  opts.trials = c.trials;
  opts.required_fraction = c.required_fraction;
  opts.seed = cfg.seed;
  opts.threads = threads;
  std::vector<BoundReport> out{check_cascaded_bound(identity, opts)};
  if (c.adversarial) {
    opts.adversarial = true;
    BoundReport adv = check_cascaded_bound(identity, opts);
    adv.name = "cascaded_error_adversarial";
    const double tight = adv.metadata.value("min_tightness", 0.0);
    adv.metadata["required_tightness"] = c.min_tightness;
    adv.metadata["checks"] = {{"tightness", tight >= c.min_tightness}};
    out.push_back(std::move(adv));
  }
  return out;
}

std::vector<BoundReport> verify_guidance(const ExperimentConfig& cfg, const GuidanceSection& g,
                                         const NoiseSchedule& schedule, unsigned threads) {
  std::vector<std::string> labels = g.labels;
  if (labels.empty()) {
    for (const auto& [name, idx] : cfg.model.labels()) labels.push_back(name);
  }
  std::vector<GuidedDenoiser> denoisers;
  for (const auto& l : labels) {
    denoisers.emplace_back(cfg.model, Condition::concept_of(cfg.model, l), schedule);
  }
  GuidanceOptions opts;
  opts.probes = g.probes;
  opts.s_max = g.s_max;
  opts.required_fraction = g.required_fraction;
  opts.seed = cfg.seed;
  opts.threads = threads;
  auto reports = check_guidance_amplification(denoisers, opts);
  for (auto& r : reports) r.metadata["labels"] = labels;
  return reports;
}

BoundReport verify_locality(const ExperimentConfig& cfg, const LocalitySection& l,
                            const NoiseSchedule& schedule) {
  const int t = cfg.level(l.t_fraction);
  const GuidedDenoiser den(cfg.model, Condition::concept_of(cfg.model, l.target), schedule);
  const CounterRng rng = CounterRng(cfg.seed).derive("locality-point");
  Vector x_t;
  if (l.point == "boundary") {
    const auto& comps = cfg.model.components();
    const Vector mid = 0.5 * (comps[cfg.model.label(l.target).front()].mean +
                              comps[cfg.model.label(l.boundary_other).front()].mean);
    x_t = std::sqrt(schedule.alpha_bar(t)) * mid;
  } else {
    x_t = den.conditional().at(t).sample(rng, 0);
  }
  const Vector x0 = den.conditional().at(0).sample(rng, 1);
  const Vector anchor = forward_noise(x0, t - 1, schedule, rng.derive("anchor")).x;
  LocalityOptions opts;
  opts.radii = l.radii;
  opts.seed = cfg.seed;
  return check_locality_bound(den, x_t, t, l.guidance_scale, l.mask, anchor, opts);
}

BoundReport verify_drift(const ExperimentConfig& cfg, const DriftSection& d,
                         const NoiseSchedule& schedule, unsigned threads) {
  const Editor editor(cfg.model, schedule,
                      {cfg.refine_iters, cfg.identity, cfg.seed});
  EditRequest request;
  request.instruction = Condition::concept_of(cfg.model, d.target);
  EditParams params;
  params.guidance_scale = d.guidance_scale;
  params.noise_level = cfg.level(d.t0_fraction);
  params.seed = cfg.seed;
  const EditorMap map = [&](const Vector& x) {
    return editor.invert_and_edit(x, d.source, request, params, MaskMode::None).x0_hat;
  };
  const Vector start = resolve_input(cfg.model, {d.source, std::nullopt}, cfg.seed);
  DriftOptions opts;
  opts.turns = d.turns;
  opts.error_norms = per_level(d.error_norms, d.turns);
  opts.init_error = d.init_error;
  opts.trials = d.trials;
  opts.affine = d.affine;
  opts.check_growth = d.check_growth;
  opts.seed = cfg.seed;
  opts.threads = threads;
  BoundReport r = check_drift_bound(map, start, opts);
  r.metadata["editor"] = {{"source", d.source},
                          {"target", d.target},
                          {"s", d.guidance_scale},
                          {"t0", params.noise_level}};
  return r;
}

std::uint64_t cell_seed(std::uint64_t base, std::string_view stream, std::uint64_t index) {
  return CounterRng(base).derive(stream).bits(index, 0);
}

}  // namespace

unsigned resolve_threads(std::optional<unsigned> flag) {
  if (flag) return std::max(1u, *flag);
  if (const char* env = std::getenv("LAB_THREADS")) {
    char* end = nullptr;
    const unsigned long n = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return static_cast<unsigned>(n);
    std::clog << "warning: ignoring LAB_THREADS='" << env << "'\n";
  }
  return 1;
}

Editor make_editor(const ExperimentConfig& cfg) {
  return Editor(cfg.model, cfg.schedule.build(), {cfg.refine_iters, cfg.identity, cfg.seed});
}

Vector resolve_input(const MixtureModel& model, const InputSpec& input, std::uint64_t seed) {
  if (input.x0) return *input.x0;
  const NoisedMixture data(model, Condition::concept_of(model, input.source), 1.0);
  return data.sample(CounterRng(seed).derive("input"), 0);
}

bool VerifyOutcome::passed() const {
  return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.passed(); });
}

json VerifyOutcome::to_json() const {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  return arr;
}

VerifyOutcome run_verify(const ExperimentConfig& cfg, unsigned threads) {
  if (!cfg.verify) throw ConfigError("config has no verify section");
  const auto& v = *cfg.verify;
  if (!v.cascaded && !v.guidance && !v.locality && !v.drift) {
    throw ConfigError("verify section selects no checker");
  }
  const NoiseSchedule schedule = cfg.schedule.build();
  VerifyOutcome out;
  auto append = [&](std::vector<BoundReport> rs) {
    for (auto& r : rs) out.reports.push_back(std::move(r));
  };
  if (v.cascaded) append(verify_cascaded(cfg, *v.cascaded, schedule, threads));
  if (v.guidance) append(verify_guidance(cfg, *v.guidance, schedule, threads));
  if (v.locality) out.reports.push_back(verify_locality(cfg, *v.locality, schedule));
  if (v.drift) out.reports.push_back(verify_drift(cfg, *v.drift, schedule, threads));
  return out;
}

std::string SweepOutcome::csv() const {
  std::string out = "s,t0,seed,faithfulness,locality_mse,consistency,quality_nll,identity_drift\n";
  for (const auto& c : cells) {
    const auto& m = c.metrics;
    out += format_double(c.guidance_scale) + ',' + std::to_string(c.noise_level) + ',' +
           std::to_string(c.seed) + ',' + format_double(m.faithfulness) + ',' +
           format_double(m.locality_mse) + ',' + format_double(m.consistency) + ',' +
           format_double(m.quality_nll) + ',' + format_double(m.identity_drift) + '\n';
  }
  return out;
}

json SweepOutcome::trend_json() const {
  return {{"s", s_grid},
          {"mean_faithfulness", mean_faithfulness},
          {"mean_locality_mse", mean_locality_mse},
          {"spearman_faithfulness_vs_s", rho_faithfulness},
          {"spearman_locality_mse_vs_s", rho_locality_mse},
          {"aggregation", "per-s mean over seeds and t0 levels"},
          {"cells", cells.size()}};
}

SweepOutcome run_sweep(const ExperimentConfig& cfg, unsigned threads) {
  if (!cfg.sweep) throw ConfigError("config has no sweep section");
  if (!cfg.edit) throw ConfigError("sweep needs an edit section for the request");
  const auto& sw = *cfg.sweep;
  const auto& e = *cfg.edit;
  const Editor editor = make_editor(cfg);

  EditRequest request;
  request.instruction = Condition::concept_of(cfg.model, e.target);
  request.mask = e.mask;

  std::vector<int> levels;
  for (double f : sw.t0_fractions) levels.push_back(cfg.level(f));
  const std::size_t n_t0 = levels.size();
  const auto n_seed = static_cast<std::size_t>(sw.seeds);

  SweepOutcome out;
  out.s_grid = sw.s_grid;
  out.cells.resize(sw.s_grid.size() * n_t0 * n_seed);
  parallel_for(out.cells.size(), threads, [&](std::size_t i) {
    const std::size_t k = i % n_seed;
    const std::size_t j = (i / n_seed) % n_t0;
    const std::size_t si = i / (n_seed * n_t0);
    auto& cell = out.cells[i];
    cell.guidance_scale = sw.s_grid[si];
    cell.noise_level = levels[j];
    cell.seed = cell_seed(cfg.seed, "sweep", k);
    const Vector x0 = resolve_input(cfg.model, e.input, cell.seed);
    EditParams params{cell.guidance_scale, cell.noise_level, 0, cell.seed};
    cell.metrics =
        editor.invert_and_edit(x0, e.input.source, request, params, e.mode, e.preservation)
            .report.metrics;
  });

  for (std::size_t si = 0; si < sw.s_grid.size(); ++si) {
    double faith = 0.0, loc = 0.0;
    const std::size_t per = n_t0 * n_seed;
    for (std::size_t q = 0; q < per; ++q) {
      faith += out.cells[si * per + q].metrics.faithfulness;
      loc += out.cells[si * per + q].metrics.locality_mse;
    }
    out.mean_faithfulness.push_back(faith / static_cast<double>(per));
    out.mean_locality_mse.push_back(loc / static_cast<double>(per));
  }
  if (sw.s_grid.size() >= 2) {
    out.rho_faithfulness = spearman(sw.s_grid, out.mean_faithfulness);
    out.rho_locality_mse = spearman(sw.s_grid, out.mean_locality_mse);
  }
  return out;
}

EditOutcome run_edit(const ExperimentConfig& cfg) {
  if (!cfg.edit) throw ConfigError("config has no edit section");
  const auto& e = *cfg.edit;
  const Editor editor = make_editor(cfg);
  EditRequest request;
  request.instruction = Condition::concept_of(cfg.model, e.target);
  request.mask = e.mask;
  EditParams params{e.guidance_scale, cfg.level(e.t0_fraction), e.steps, cfg.seed};

  EditOutcome out;
  out.x0 = resolve_input(cfg.model, e.input, cfg.seed);
  out.result = editor.invert_and_edit(out.x0, e.input.source, request, params, e.mode,
                                      e.preservation);
  // Without a mask the whole state is editable and nothing is preserved.
  const RegionMask everything = RegionMask::all(cfg.model.dim(), true);
  ObjectiveContext ctx;
  ctx.model = &cfg.model;
  ctx.inferred_mask = &everything;
  out.objective = edit_objective(out.result.x0_hat, out.x0, request, e.weights, ctx);
  return out;
}

std::string MultiturnOutcome::csv() const {
  std::string out = "seed,turn,faithfulness,consistency,stability,drift,retried,artifact\n";
  for (std::size_t k = 0; k < runs.size(); ++k) {
    for (const auto& r : runs[k].records) {
      out += std::to_string(seeds[k]) + ',' + std::to_string(r.turn) + ',' +
             format_double(r.metrics.faithfulness) + ',' + format_double(r.metrics.consistency) +
             ',' + format_double(r.stability) + ',' + format_double(r.drift) + ',' +
             (r.retried ? "1" : "0") + ',' + (r.artifact ? "1" : "0") + '\n';
    }
  }
  return out;
}

json MultiturnOutcome::to_json() const {
  json arr = json::array();
  for (std::size_t k = 0; k < runs.size(); ++k) {
    json j = runs[k].to_json();
    j["seed"] = seeds[k];
    arr.push_back(std::move(j));
  }
  return {{"runs", std::move(arr)},
          {"artifact_threshold", threshold.to_json()},
          {"increasing_fraction", increasing_fraction()},
          {"mean_final_drift", mean_final_drift()},
          {"unstable", std::any_of(runs.begin(), runs.end(),
                                   [](const auto& r) { return r.unstable; })}};
}

double MultiturnOutcome::increasing_fraction() const {
  if (runs.empty()) return 0.0;
  int count = 0;
  for (const auto& run : runs) {
    bool inc = true;
    for (std::size_t i = 1; i < run.records.size(); ++i) {
      inc = inc && run.records[i].drift > run.records[i - 1].drift;
    }
    count += inc ? 1 : 0;
  }
  return static_cast<double>(count) / static_cast<double>(runs.size());
}

double MultiturnOutcome::mean_final_drift() const {
  if (runs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& run : runs) sum += run.records.back().drift;
  return sum / static_cast<double>(runs.size());
}

MultiturnOutcome run_multiturn(const ExperimentConfig& cfg, unsigned threads) {
  if (!cfg.multiturn) throw ConfigError("config has no multiturn section");
  const auto& m = *cfg.multiturn;
  const Editor editor = make_editor(cfg);
  std::vector<EditRequest> requests;
  for (const auto& t : m.turns) {
    EditRequest r;
    r.instruction = Condition::concept_of(cfg.model, t.target);
    r.mask = t.mask;
    requests.push_back(std::move(r));
  }
  MultiturnOutcome out;
  out.threshold = calibrate_artifact_threshold(cfg.model, cfg.seed, m.artifact_samples);
  out.seeds.resize(static_cast<std::size_t>(m.seeds));
  out.runs.resize(out.seeds.size());
  parallel_for(out.runs.size(), threads, [&](std::size_t k) {
    out.seeds[k] = cell_seed(cfg.seed, "multiturn", k);
    const Vector x0 = resolve_input(cfg.model, {m.source, std::nullopt}, out.seeds[k]);
    const EditParams params{m.guidance_scale, cfg.level(m.t0_fraction), 0, out.seeds[k]};
    out.runs[k] = editor.iterative_edit(x0, m.source, requests, params, m.mode, m.policy,
                                        out.threshold, m.preservation);
  });
  return out;
}

DragOutcome run_drag(const ExperimentConfig& cfg) {
  if (!cfg.drag) throw ConfigError("config has no drag section");
  const auto& d = *cfg.drag;
  const Editor editor = make_editor(cfg);
  DragOutcome out;
  out.x0 = resolve_input(cfg.model, d.input, cfg.seed);
  const EditParams params{1.0, cfg.level(d.t0_fraction), 0, cfg.seed};
  out.result = editor.drag_edit(out.x0, d.input.source, d.spec, params,
                                d.mask ? &*d.mask : nullptr);
  return out;
}

int run_command(const std::string& command, const CommandOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  try {
    if (options.config && options.profile) {
      throw ConfigError("pass either --config or --profile, not both");
    }
    if (!options.config && !options.profile) throw ConfigError("--config or --profile is required");
    ExperimentConfig cfg =
        options.config ? load_config_file(*options.config) : load_profile(*options.profile);
    if (options.seed) cfg.seed = *options.seed;
    const unsigned threads = resolve_threads(options.threads);
    std::filesystem::create_directories(options.out);
    const auto& out = options.out;
    const json echo = {{"name", cfg.name}, {"seed", cfg.seed}, {"config", cfg.raw}};

    int code = kExitOk;
    if (command == "verify") {
      const auto v = run_verify(cfg, threads);
      write_text(out / "bound_reports.json", dump(v.to_json()));
      write_text(out / "bound_summary.csv", bound_summary_csv(v.reports));
      for (const auto& r : v.reports) {
        std::cerr << (r.passed() ? "ok    " : "FAIL  ") << r.name << "  satisfied "
                  << r.satisfied_count << "/" << r.trials << "  slack " << r.slack << "\n";
      }
      code = v.passed() ? kExitOk : kExitViolation;
    } else if (command == "sweep") {
      const auto s = run_sweep(cfg, threads);
      write_text(out / "sweep.csv", s.csv());
      json trend = s.trend_json();
      trend["seed"] = cfg.seed;
      write_text(out / "sweep_trend.json", dump(trend));
    } else if (command == "edit") {
      const auto e = run_edit(cfg);
      json report = echo;
      report["input"] = vec_json(e.x0);
      report["output"] = vec_json(e.result.x0_hat);
      report["report"] = e.result.report.to_json(true);
      report["objective"] = {{"faith", e.objective.faith},
                             {"pres", e.objective.pres},
                             {"qual", e.objective.qual},
                             {"stab", e.objective.stab},
                             {"total", e.objective.total}};
      write_text(out / "edit_report.json", dump(report));
      write_text(out / "edit_inversion.csv", e.result.report.inversion.to_csv());
      write_text(out / "edit_reverse.csv", e.result.report.reverse.to_csv());
      write_text(out / "schedule.csv", make_editor(cfg).schedule().to_csv());
    } else if (command == "multiturn") {
      const auto m = run_multiturn(cfg, threads);
      json report = echo;
      report["result"] = m.to_json();
      write_text(out / "multiturn_report.json", dump(report));
      write_text(out / "multiturn_turns.csv", m.csv());
    } else if (command == "drag") {
      const auto d = run_drag(cfg);
      json report = echo;
      report["input"] = vec_json(d.x0);
      report["result"] = d.result.to_json();
      write_text(out / "drag_report.json", dump(report));
      write_text(out / "drag_history.csv", d.result.history_csv());
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    std::cerr << command << " finished in " << elapsed.count() << " s (exit " << code << ")\n";
    return code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitViolation;
  }
}

}  // namespace editlab
