#pragma once

#include <cstdint>
#include <string_view>

#include <Eigen/Dense>

namespace editlab {

/// Counter-based generator: every draw is a pure function of
/// (seed, stream, counter), so results never depend on call order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Child generator keyed by an integer tag.
  CounterRng derive(std::uint64_t tag) const;
  /// Child generator keyed by a name, e.g. "anchor" or "probe".
  CounterRng derive(std::string_view tag) const;

  std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) const;
  /// Uniform on the open interval (0, 1).
  double uniform(std::uint64_t stream, std::uint64_t counter) const;
  /// Standard normal via Box-Muller on two consecutive counters.
  double normal(std::uint64_t stream, std::uint64_t counter) const;
  /// Vector of `dim` independent standard normals drawn from one stream.
  Eigen::VectorXd normal_vector(std::uint64_t stream, Eigen::Index dim) const;
  /// Uniformly distributed unit vector.
  Eigen::VectorXd unit_vector(std::uint64_t stream, Eigen::Index dim) const;

 private:
  std::uint64_t seed_;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace editlab
