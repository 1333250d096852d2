#include "editlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "editlab/errors.hpp"

namespace editlab {

nlohmann::json MetricReport::to_json() const {
  return {{"faithfulness", faithfulness},
          {"locality_mse", locality_mse},
          {"locality_max", locality_max},
          {"consistency", consistency},
          {"quality_nll", quality_nll},
          {"identity_drift", identity_drift},
          {"locality_degenerate", locality_degenerate},
          {"consistency_degenerate", consistency_degenerate}};
}

double faithfulness(const Vector& x, const Condition& target, const MixtureModel& model) {
  return NoisedMixture(model, target, 1.0).log_density(x);
}

LocalityResult locality(const Vector& x_hat, const Vector& x0, const RegionMask& mask) {
  if (x_hat.size() != x0.size() || mask.dim() != x0.size()) {
    throw DomainError("locality: dimension mismatch");
  }
  const auto out = mask.outside();
  if (out.empty()) return {0.0, 0.0, true};
  double sq = 0.0;
  double mx = 0.0;
  for (auto i : out) {
    const double dev = x_hat(i) - x0(i);
    sq += dev * dev;
    mx = std::max(mx, std::abs(dev));
  }
  return {sq / static_cast<double>(out.size()), mx, mask.inside().empty()};
}

ConsistencyProbe::ConsistencyProbe(Eigen::Index dim, std::uint64_t seed, Eigen::Index k)
    : projection_(k, dim) {
  const CounterRng rng = CounterRng(seed).derive("consistency-projection");
  for (Eigen::Index r = 0; r < k; ++r) {
    projection_.row(r) = rng.normal_vector(static_cast<std::uint64_t>(r), dim).transpose();
  }
}

ConsistencyResult consistency(const Vector& x_hat, const Vector& x0, const RegionMask& mask,
                              const ConsistencyProbe& probe) {
  if (x_hat.size() != x0.size() || mask.dim() != x0.size() ||
      probe.projection().cols() != x0.size()) {
    throw DomainError("consistency: dimension mismatch");
  }
  const Vector keep = mask.complement_weights();
  const Vector u = probe.projection() * keep.cwiseProduct(x_hat);
  const Vector v = probe.projection() * keep.cwiseProduct(x0);
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 && nv == 0.0) return {1.0, true};
  if (nu == 0.0 || nv == 0.0) return {0.0, true};
  return {std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0), false};
}

double quality_nll(const Vector& x, const MixtureModel& model) {
  return -NoisedMixture(model, Condition::unconditional(model), 1.0).log_density(x);
}

double identity_drift(const Vector& x_hat, const Vector& x0, const MixtureModel& model,
                      const Condition& source) {
  const auto& comp = model.components().at(source.resolved().front());
  const Vector diff = x_hat - x0;
  return std::sqrt(diff.dot(comp.cov.llt().solve(diff)));
}

MetricReport evaluate_metrics(const Vector& x_hat, const Vector& x0, const MixtureModel& model,
                              const Condition& target, const Condition& source,
                              const RegionMask* mask, const ConsistencyProbe& probe) {
  const RegionMask preserve_all = RegionMask::all(x0.size(), false);
  const RegionMask& m = mask ? *mask : preserve_all;
  MetricReport r;
  r.faithfulness = faithfulness(x_hat, target, model);
  const auto loc = locality(x_hat, x0, m);
  r.locality_mse = loc.mse;
  r.locality_max = loc.max;
  r.locality_degenerate = loc.degenerate;
  const auto cons = consistency(x_hat, x0, m, probe);
  r.consistency = cons.value;
  r.consistency_degenerate = cons.degenerate;
  r.quality_nll = quality_nll(x_hat, model);
  r.identity_drift = identity_drift(x_hat, x0, model, source);
  return r;
}

nlohmann::json ArtifactThreshold::to_json() const {
  return {{"value", value}, {"quantile", quantile}, {"samples", samples}, {"seed", seed}};
}

ArtifactThreshold calibrate_artifact_threshold(const MixtureModel& model, std::uint64_t seed,
                                               int samples, double quantile) {
  if (samples < 1) throw DomainError("calibration needs at least one sample");
  if (!(quantile > 0.0 && quantile <= 1.0)) throw DomainError("quantile must lie in (0, 1]");
  const NoisedMixture data(model, Condition::unconditional(model), 1.0);
  const CounterRng rng = CounterRng(seed).derive("artifact-calibration");
  std::vector<double> nll(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    nll[static_cast<std::size_t>(i)] =
        -data.log_density(data.sample(rng, static_cast<std::uint64_t>(i)));
  }
  std::sort(nll.begin(), nll.end());
  const auto rank = static_cast<std::size_t>(std::ceil(quantile * samples));
  return {nll[std::max<std::size_t>(rank, 1) - 1], quantile, samples, seed};
}

StabilitySummary stability_and_artifacts(const std::vector<TurnRecord>& records,
                                         const ArtifactThreshold& threshold,
                                         const RegionMask& mask, const ConsistencyProbe& probe) {
  if (records.size() < 2) throw DomainError("stability needs at least two turns");
  double sim = 0.0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    sim += consistency(records[i].image, records[i - 1].image, mask, probe).value;
  }
  std::size_t flagged = 0;
  for (const auto& r : records) {
    if (r.metrics.quality_nll > threshold.value) ++flagged;
  }
  return {sim / static_cast<double>(records.size() - 1),
          static_cast<double>(flagged) / static_cast<double>(records.size())};
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("spearman needs paired samples");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace editlab
