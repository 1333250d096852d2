#include "editlab/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "editlab/errors.hpp"

namespace editlab {

namespace {

constexpr double kWeightSumTol = 1e-12;
constexpr double kSymmetryTol = 1e-12;
constexpr double kMinEigenvalue = 1e-9;
constexpr double kDegenerateWeight = 1e-12;

Matrix parse_covariance(const nlohmann::json& j, Eigen::Index dim) {
  if (j.is_number()) {
    return j.get<double>() * Matrix::Identity(dim, dim);
  }
  if (j.is_object()) {
    // {"scale": v, "ar1": rho}: v * rho^|i-k|
    const double scale = j.value("scale", 1.0);
    const double rho = j.value("ar1", 0.0);
    Matrix cov(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      for (Eigen::Index k = 0; k < dim; ++k) {
        cov(i, k) = scale * std::pow(rho, static_cast<double>(std::abs(i - k)));
      }
    }
    return cov;
  }
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != dim) {
    throw ConfigError("covariance must be a scalar, an {scale, ar1} object, a length-" + std::to_string(dim) +
                      " diagonal or a " + std::to_string(dim) + "x" + std::to_string(dim) +
                      " matrix");
  }
  if (j.front().is_number()) {
    Matrix cov = Matrix::Zero(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i) cov(i, i) = j[i].get<double>();
    return cov;
  }
  Matrix cov(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    const auto& row = j[i];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != dim) {
      throw ConfigError("covariance row " + std::to_string(i) + " has wrong length");
    }
    for (Eigen::Index k = 0; k < dim; ++k) cov(i, k) = row[k].get<double>();
  }
  return cov;
}

}  // namespace

MixtureModel::MixtureModel(std::vector<GaussianComponent> components, LabelMap labels)
    : components_(std::move(components)), labels_(std::move(labels)) {
  if (components_.empty()) throw DomainError("mixture needs at least one component");
  dim_ = components_.front().mean.size();
  if (dim_ < 1) throw DomainError("mixture dimension must be positive");

  double total = 0.0;
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& c = components_[i];
    const std::string which = "component " + std::to_string(i);
    if (!(c.weight > 0.0 && c.weight <= 1.0)) throw DomainError(which + ": weight outside (0,1]");
    if (c.mean.size() != dim_) throw DomainError(which + ": mean dimension mismatch");
    if (c.cov.rows() != dim_ || c.cov.cols() != dim_) {
      throw DomainError(which + ": covariance shape mismatch");
    }
    if ((c.cov - c.cov.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol) {
      throw DomainError(which + ": covariance is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(c.cov, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < kMinEigenvalue) {
      throw DomainError(which + ": covariance is not positive definite");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > kWeightSumTol) {
    throw DomainError("mixture weights sum to " + std::to_string(total) + ", expected 1");
  }
  for (const auto& [name, idx] : labels_) {
    if (idx.empty()) throw DomainError("label '" + name + "' selects no components");
    for (auto i : idx) {
      if (i >= components_.size()) {
        throw DomainError("label '" + name + "' references component " + std::to_string(i) +
                          " out of range");
      }
    }
  }
}

MixtureModel MixtureModel::from_json(const nlohmann::json& j) {
  try {
    const auto dim = j.at("dim").get<Eigen::Index>();
    if (dim < 1) throw ConfigError("model.dim must be positive");
    std::vector<GaussianComponent> comps;
    for (const auto& cj : j.at("components")) {
      GaussianComponent c;
      c.weight = cj.at("weight").get<double>();
      const auto mean = cj.at("mean").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(mean.size()) != dim) {
        throw ConfigError("component mean has length " + std::to_string(mean.size()) +
                          ", expected " + std::to_string(dim));
      }
      c.mean = Eigen::Map<const Vector>(mean.data(), dim);
      c.cov = parse_covariance(cj.at("cov"), dim);
      comps.push_back(std::move(c));
    }
    LabelMap labels;
    if (j.contains("labels")) {
      for (const auto& [name, idx] : j.at("labels").items()) {
        labels[name] = idx.get<std::vector<std::size_t>>();
      }
    }
    return MixtureModel(std::move(comps), std::move(labels));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

nlohmann::json MixtureModel::to_json() const {
  nlohmann::json j;
  j["dim"] = dim_;
  auto& comps = j["components"] = nlohmann::json::array();
  for (const auto& c : components_) {
    nlohmann::json cov = nlohmann::json::array();
    for (Eigen::Index r = 0; r < dim_; ++r) {
      cov.push_back(std::vector<double>(c.cov.row(r).begin(), c.cov.row(r).end()));
    }
    comps.push_back({{"weight", c.weight},
                     {"mean", std::vector<double>(c.mean.begin(), c.mean.end())},
                     {"cov", std::move(cov)}});
  }
  j["labels"] = nlohmann::json::object();
  for (const auto& [name, idx] : labels_) j["labels"][name] = idx;
  return j;
}

const std::vector<std::size_t>& MixtureModel::label(std::string_view name) const {
  auto it = labels_.find(name);
  if (it == labels_.end()) throw ConditionError("unknown label '" + std::string(name) + "'");
  return it->second;
}

bool MixtureModel::has_label(std::string_view name) const { return labels_.contains(name); }

Condition::Condition(Kind kind, std::string label, std::vector<std::size_t> resolved)
    : kind_(kind), label_(std::move(label)), resolved_(std::move(resolved)) {
  if (resolved_.empty()) throw ConditionError("condition resolves to no components");
  std::sort(resolved_.begin(), resolved_.end());
  resolved_.erase(std::unique(resolved_.begin(), resolved_.end()), resolved_.end());
}

Condition Condition::unconditional(const MixtureModel& model) {
  std::vector<std::size_t> all(model.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return Condition(Kind::Unconditional, "", std::move(all));
}

Condition Condition::concept_of(const MixtureModel& model, std::string_view label) {
  return Condition(Kind::Concept, std::string(label), model.label(label));
}

Condition Condition::identity(const MixtureModel& model, std::string_view source_label,
                              IdentityResolution resolution) {
  if (resolution == IdentityResolution::Unconditional) {
    auto u = unconditional(model);
    return Condition(Kind::Identity, std::string(source_label), u.resolved());
  }
  return Condition(Kind::Identity, std::string(source_label), model.label(source_label));
}

std::string Condition::describe() const {
  switch (kind_) {
    case Kind::Unconditional:
      return "unconditional";
    case Kind::Concept:
      return "concept:" + label_;
    case Kind::Identity:
      return "identity:" + label_;
  }
  return "?";
}

NoisedMixture::NoisedMixture(const MixtureModel& model, const Condition& cond, double alpha_bar)
    : alpha_bar_(alpha_bar), dim_(model.dim()) {
  if (!(alpha_bar > 0.0 && alpha_bar <= 1.0)) {
    throw DomainError("alpha_bar must lie in (0, 1], got " + std::to_string(alpha_bar));
  }
  if (cond.resolved().empty()) throw ConditionError("empty condition");

  double total = 0.0;
  for (auto i : cond.resolved()) {
    if (i >= model.size()) throw ConditionError("condition references unknown component");
    total += model.components()[i].weight;
  }

  const double signal = std::sqrt(alpha_bar);
  const Matrix noise = (1.0 - alpha_bar) * Matrix::Identity(dim_, dim_);
  for (auto i : cond.resolved()) {
    const auto& base = model.components()[i];
    const double w = base.weight / total;
    if (w < kDegenerateWeight) {
      std::clog << "editlab: warning: dropping component " << i << " with renormalized weight "
                << w << "\n";
      ++dropped_;
      continue;
    }
    Component c;
    c.source_index = i;
    c.weight = w;
    c.log_weight = std::log(w);
    c.mean = alpha_bar == 1.0 ? base.mean : Vector(signal * base.mean);
    c.cov = alpha_bar == 1.0 ? base.cov : Matrix(alpha_bar * base.cov + noise);
    c.chol.compute(c.cov);
    if (c.chol.info() != Eigen::Success) {
      throw NumericalError("Cholesky factorization failed for component " + std::to_string(i));
    }
    c.precision = c.chol.solve(Matrix::Identity(dim_, dim_));
    c.precision = 0.5 * (c.precision + c.precision.transpose()).eval();
    const double log_det = 2.0 * c.chol.matrixLLT().diagonal().array().log().sum();
    c.log_norm = -0.5 * (static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi) + log_det);
    components_.push_back(std::move(c));
  }
  if (dropped_ > 0) {
    // renormalize what is left
    double kept = 0.0;
    for (const auto& c : components_) kept += c.weight;
    for (auto& c : components_) {
      c.weight /= kept;
      c.log_weight = std::log(c.weight);
    }
  }
}

void NoisedMixture::check_dim(const Vector& x) const {
  if (x.size() != dim_) {
    throw DomainError("point has dimension " + std::to_string(x.size()) + ", model has " +
                      std::to_string(dim_));
  }
}

Vector NoisedMixture::log_terms(const Vector& x) const {
  Vector terms(static_cast<Eigen::Index>(components_.size()));
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& c = components_[i];
    const Vector r = x - c.mean;
    const double quad = r.dot(c.chol.solve(r));
    terms(static_cast<Eigen::Index>(i)) = c.log_weight + c.log_norm - 0.5 * quad;
  }
  return terms;
}

double NoisedMixture::log_density(const Vector& x) const {
  check_dim(x);
  const Vector terms = log_terms(x);
  const double top = terms.maxCoeff();
  return top + std::log((terms.array() - top).exp().sum());
}

Vector NoisedMixture::responsibilities(const Vector& x) const {
  check_dim(x);
  const Vector terms = log_terms(x);
  const double top = terms.maxCoeff();
  Vector g = (terms.array() - top).exp();
  return g / g.sum();
}

Vector NoisedMixture::score(const Vector& x) const {
  const Vector g = responsibilities(x);
  Vector s = Vector::Zero(dim_);
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& c = components_[i];
    s.noalias() -= g(static_cast<Eigen::Index>(i)) * (c.precision * (x - c.mean));
  }
  return s;
}

Matrix NoisedMixture::score_jacobian(const Vector& x) const {
  const Vector g = responsibilities(x);
  std::vector<Vector> scores;
  scores.reserve(components_.size());
  Vector s = Vector::Zero(dim_);
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& c = components_[i];
    scores.push_back(-(c.precision * (x - c.mean)));
    s.noalias() += g(static_cast<Eigen::Index>(i)) * scores.back();
  }
  Matrix h = Matrix::Zero(dim_, dim_);
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const double gi = g(static_cast<Eigen::Index>(i));
    const Vector dev = scores[i] - s;
    h.noalias() -= gi * components_[i].precision;
    h.noalias() += gi * (dev * dev.transpose());
  }
  return 0.5 * (h + h.transpose());
}

Vector NoisedMixture::sample(const CounterRng& rng, std::uint64_t stream) const {
  const CounterRng draw = rng.derive(stream);
  const double u = draw.uniform(0, 0);
  std::size_t pick = components_.size() - 1;
  double acc = 0.0;
  for (std::size_t i = 0; i < components_.size(); ++i) {
    acc += components_[i].weight;
    if (u < acc) {
      pick = i;
      break;
    }
  }
  const auto& c = components_[pick];
  return c.mean + c.chol.matrixL() * draw.normal_vector(1, dim_);
}

NoisedMixture noised_mixture(const MixtureModel& model, const Condition& cond, double alpha_bar) {
  return NoisedMixture(model, cond, alpha_bar);
}

Vector eps_pred(const MixtureModel& model, const Condition& cond, const Vector& x_t,
                double alpha_bar) {
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0)) {
    throw DomainError("eps_pred needs alpha_bar in (0, 1); the noise is undefined at 1");
  }
  return -std::sqrt(1.0 - alpha_bar) * NoisedMixture(model, cond, alpha_bar).score(x_t);
}

}  // namespace editlab
