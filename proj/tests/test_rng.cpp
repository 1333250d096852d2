#include <doctest.h>

#include <cmath>
#include <set>

#include "editlab/format.hpp"
#include "editlab/parallel.hpp"
#include "editlab/rng.hpp"

using namespace editlab;

TEST_SUITE("rng") {
  TEST_CASE("draws are pure functions of seed, stream and counter") {
    const CounterRng a(42), b(42);
    CHECK(a.bits(3, 7) == b.bits(3, 7));
    CHECK(a.bits(3, 7) != a.bits(3, 8));
    CHECK(a.bits(3, 7) != a.bits(4, 7));
    CHECK(a.bits(3, 7) != CounterRng(43).bits(3, 7));
    // reading out of order changes nothing
    const double late = a.uniform(9, 1000);
    CHECK(a.uniform(9, 0) == b.uniform(9, 0));
    CHECK(a.uniform(9, 1000) == late);
  }

  TEST_CASE("derived generators are distinct and reproducible") {
    const CounterRng root(1);
    std::set<std::uint64_t> seeds;
    for (std::uint64_t k = 0; k < 1000; ++k) seeds.insert(root.derive(k).seed());
    CHECK(seeds.size() == 1000);
    CHECK(root.derive("anchor").seed() == CounterRng(1).derive("anchor").seed());
    CHECK(root.derive("anchor").seed() != root.derive("probe").seed());
  }

  TEST_CASE("uniform lies in the open unit interval with mean 1/2") {
    const CounterRng r(5);
    const int n = 200000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double u = r.uniform(0, static_cast<std::uint64_t>(i));
      REQUIRE(u > 0.0);
      REQUIRE(u < 1.0);
      sum += u;
    }
    // SE of the mean is sqrt(1/12 / n)
    CHECK(std::abs(sum / n - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / n));
  }

  TEST_CASE("normal draws have zero mean and unit variance") {
    const CounterRng r(11);
    const int n = 200000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double z = r.normal(2, static_cast<std::uint64_t>(i));
      s1 += z;
      s2 += z * z;
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(n));
    CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / n));
  }

  TEST_CASE("unit vectors have unit norm") {
    const CounterRng r(3);
    for (std::uint64_t k = 0; k < 50; ++k) CHECK(std::abs(r.unit_vector(k, 7).norm() - 1.0) < 1e-14);
  }
}

TEST_SUITE("format") {
  TEST_CASE("shortest representation round-trips") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0, 1e-8}) {
      CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(0.5) == "0.5");
    CHECK(join_csv(Eigen::Vector3d(1.0, -0.25, 3.0)) == "1,-0.25,3");
  }

  TEST_CASE("parallel_for fills every slot and rethrows") {
    std::vector<int> out(100, 0);
    parallel_for(out.size(), 4, [&](std::size_t i) { out[i] = static_cast<int>(i) * 2; });
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == static_cast<int>(i) * 2);
    CHECK_THROWS_AS(parallel_for(10, 3,
                                 [](std::size_t i) {
                                   if (i == 5) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
  }
}
