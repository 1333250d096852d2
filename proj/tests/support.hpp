// Shared fixtures and independent oracles for the unit tests.
#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "editlab/config.hpp"
#include "editlab/mixture.hpp"
#include "editlab/rng.hpp"
#include "editlab/sampler.hpp"

namespace editlab::testing {

inline Matrix ar1(Eigen::Index d, double scale, double rho) {
  Matrix m(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) {
      m(i, k) = scale * std::pow(rho, static_cast<double>(std::abs(i - k)));
    }
  }
  return m;
}

inline MixtureModel single_gaussian(const Vector& mean, const Matrix& cov) {
  return MixtureModel({{1.0, mean, cov}}, {{"A", {0}}});
}

inline MixtureModel canonical_model() { return load_profile("canonical").model; }

/// Random well-conditioned mixture with labels "c0".."c{n-1}" and "all".
inline MixtureModel random_mixture(Eigen::Index d, int n, std::uint64_t seed) {
  const CounterRng rng = CounterRng(seed).derive("random-mixture");
  std::vector<GaussianComponent> comps;
  MixtureModel::LabelMap labels;
  double total = 0.0;
  std::vector<double> w;
  for (int i = 0; i < n; ++i) {
    w.push_back(0.5 + rng.uniform(static_cast<std::uint64_t>(i), 0));
    total += w.back();
  }
  for (int i = 0; i < n; ++i) {
    const auto s = static_cast<std::uint64_t>(i);
    Matrix g(d, d);
    for (Eigen::Index r = 0; r < d; ++r) g.row(r) = rng.derive(100 + s).normal_vector(r, d);
    Matrix cov = 0.3 * g * g.transpose() / static_cast<double>(d) + 0.5 * Matrix::Identity(d, d);
    cov = 0.5 * (cov + cov.transpose());
    comps.push_back({w[static_cast<std::size_t>(i)] / total, 1.5 * rng.normal_vector(200 + s, d), cov});
    labels["c" + std::to_string(i)] = {static_cast<std::size_t>(i)};
  }
  // renormalize exactly
  double sum = 0.0;
  for (const auto& c : comps) sum += c.weight;
  for (auto& c : comps) c.weight /= sum;
  std::vector<std::size_t> all(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  labels["all"] = all;
  return MixtureModel(std::move(comps), std::move(labels));
}

/// Naive density of a Gaussian mixture: explicit inverse and determinant.
inline double naive_density(const std::vector<double>& w, const std::vector<Vector>& means,
                            const std::vector<Matrix>& covs, const Vector& x) {
  double p = 0.0;
  const double d = static_cast<double>(x.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Vector r = x - means[i];
    const double q = r.dot(covs[i].inverse() * r);
    p += w[i] * std::exp(-0.5 * q) /
         std::sqrt(std::pow(2.0 * std::numbers::pi, d) * covs[i].determinant());
  }
  return p;
}

/// Central-difference gradient of a scalar function.
template <class F>
Vector fd_gradient(F&& f, const Vector& x, double h) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector up = x, down = x;
    up(i) += h;
    down(i) -= h;
    g(i) = (f(up) - f(down)) / (2.0 * h);
  }
  return g;
}

/// Central-difference Jacobian of a vector function.
template <class F>
Matrix fd_jacobian(F&& f, const Vector& x, double h) {
  Matrix j(x.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector up = x, down = x;
    up(i) += h;
    down(i) -= h;
    j.col(i) = (f(up) - f(down)) / (2.0 * h);
  }
  return j;
}

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace editlab::testing
