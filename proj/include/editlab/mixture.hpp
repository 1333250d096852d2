#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "editlab/rng.hpp"

namespace editlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct GaussianComponent {
  double weight = 1.0;
  Vector mean;
  Matrix cov;
};

/// Labeled Gaussian mixture standing in for the image prior. Every score,
/// noise prediction and Jacobian in the library is computed from it in
/// closed form.
class MixtureModel {
 public:
  using LabelMap = std::map<std::string, std::vector<std::size_t>, std::less<>>;

  MixtureModel(std::vector<GaussianComponent> components, LabelMap labels);

  /// Parses {"dim", "components": [{"weight","mean","cov"}], "labels"}.
  /// "cov" may be a full matrix, a diagonal (array of numbers), a scalar, or
  /// {"scale": v, "ar1": rho} for v * rho^|i-k|.
  static MixtureModel from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  Eigen::Index dim() const { return dim_; }
  std::size_t size() const { return components_.size(); }
  const std::vector<GaussianComponent>& components() const { return components_; }
  const LabelMap& labels() const { return labels_; }
  const std::vector<std::size_t>& label(std::string_view name) const;
  bool has_label(std::string_view name) const;

 private:
  Eigen::Index dim_ = 0;
  std::vector<GaussianComponent> components_;
  LabelMap labels_;
};

/// How the identity condition c_id resolves.
enum class IdentityResolution {
  Source,         // the declared source components of the input
  Unconditional,  // ablation: every component
};

/// A conditioning signal, resolved to the subset of mixture components it
/// selects. Unconditional selects all of them.
class Condition {
 public:
  enum class Kind { Unconditional, Concept, Identity };

  static Condition unconditional(const MixtureModel& model);
  static Condition concept_of(const MixtureModel& model, std::string_view label);
  static Condition identity(const MixtureModel& model, std::string_view source_label,
                            IdentityResolution resolution = IdentityResolution::Source);

  Kind kind() const { return kind_; }
  const std::string& label() const { return label_; }
  const std::vector<std::size_t>& resolved() const { return resolved_; }
  std::string describe() const;

  friend bool operator==(const Condition&, const Condition&) = default;

 private:
  Condition(Kind kind, std::string label, std::vector<std::size_t> resolved);

  Kind kind_ = Kind::Unconditional;
  std::string label_;
  std::vector<std::size_t> resolved_;
};

/// Marginal of x_t = sqrt(alpha_bar) x_0 + sqrt(1 - alpha_bar) z when x_0
/// follows the condition's sub-mixture. Closed under Gaussian convolution, so
/// it is again a Gaussian mixture; Cholesky factors and precisions are
/// computed once at construction.
class NoisedMixture {
 public:
  struct Component {
    std::size_t source_index = 0;
    double weight = 0.0;
    double log_weight = 0.0;
    Vector mean;
    Matrix cov;
    Matrix precision;
    Eigen::LLT<Matrix> chol;
    double log_norm = 0.0;  // -(d log 2pi + log det cov) / 2
  };

  NoisedMixture(const MixtureModel& model, const Condition& cond, double alpha_bar);

  double alpha_bar() const { return alpha_bar_; }
  Eigen::Index dim() const { return dim_; }
  const std::vector<Component>& components() const { return components_; }
  std::size_t dropped() const { return dropped_; }
  bool is_single_gaussian() const { return components_.size() == 1; }

  double log_density(const Vector& x) const;
  /// Posterior responsibilities; non-negative, summing to one.
  Vector responsibilities(const Vector& x) const;
  Vector score(const Vector& x) const;
  /// Hessian of log p: sum_i g_i [-P_i + (s_i - s)(s_i - s)^T] with s_i the
  /// component scores and s their responsibility-weighted mean.
  Matrix score_jacobian(const Vector& x) const;

  /// Draws one sample; `stream` selects an independent draw.
  Vector sample(const CounterRng& rng, std::uint64_t stream) const;

 private:
  void check_dim(const Vector& x) const;
  Vector log_terms(const Vector& x) const;

  double alpha_bar_ = 1.0;
  Eigen::Index dim_ = 0;
  std::vector<Component> components_;
  std::size_t dropped_ = 0;
};

NoisedMixture noised_mixture(const MixtureModel& model, const Condition& cond, double alpha_bar);

/// Exact noise prediction eps = -sqrt(1 - alpha_bar) * score for alpha_bar in (0, 1).
Vector eps_pred(const MixtureModel& model, const Condition& cond, const Vector& x_t,
                double alpha_bar);

}  // namespace editlab
