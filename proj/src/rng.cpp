#include "editlab/rng.hpp"

#include <cmath>
#include <numbers>

namespace editlab {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

CounterRng CounterRng::derive(std::uint64_t tag) const {
  return CounterRng(mix64(seed_ ^ mix64(tag + 0x632BE59BD9B4E019ULL)));
}

CounterRng CounterRng::derive(std::string_view tag) const {
  // FNV-1a over the tag bytes
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return derive(h);
}

std::uint64_t CounterRng::bits(std::uint64_t stream, std::uint64_t counter) const {
  const std::uint64_t key = mix64(seed_ + kGolden * (stream + 1));
  return mix64(key ^ mix64(counter));
}

double CounterRng::uniform(std::uint64_t stream, std::uint64_t counter) const {
  const std::uint64_t top = bits(stream, counter) >> 11;
  return (static_cast<double>(top) + 0.5) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t stream, std::uint64_t counter) const {
  const double u1 = uniform(stream, 2 * counter);
  const double u2 = uniform(stream, 2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Eigen::VectorXd CounterRng::normal_vector(std::uint64_t stream, Eigen::Index dim) const {
  Eigen::VectorXd z(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    z(i) = normal(stream, static_cast<std::uint64_t>(i));
  }
  return z;
}

Eigen::VectorXd CounterRng::unit_vector(std::uint64_t stream, Eigen::Index dim) const {
  Eigen::VectorXd z = normal_vector(stream, dim);
  return z / z.norm();
}

}  // namespace editlab
