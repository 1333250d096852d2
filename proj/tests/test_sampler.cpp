#include <doctest.h>

#include <cmath>

#include "editlab/errors.hpp"
#include "editlab/sampler.hpp"
#include "support.hpp"

using namespace editlab;
using namespace editlab::testing;

TEST_SUITE("sampler") {
  TEST_CASE("coefficients from direct arithmetic") {
    const auto c = ddim_coefficients(0.8, 0.5);
    CHECK(c.a == doctest::Approx(1.2649110640673518).epsilon(1e-14));
    CHECK(c.b == doctest::Approx(-0.4472135954999579).epsilon(1e-14));
    const auto same = ddim_coefficients(0.5, 0.5);
    CHECK(same.a == 1.0);
    CHECK(same.b == 0.0);
  }

  TEST_CASE("default schedule invariants") {
    const auto s = NoiseSchedule::linear(50);
    REQUIRE(s.steps() == 50);
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(s.alpha_bar(50) <= 0.1);
    for (int t = 1; t <= 50; ++t) {
      CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
      CHECK(s.a(t) >= 1.0);
      CHECK(s.b(t) <= 0.0);
      // a_t sqrt(ab_t) = sqrt(ab_{t-1}) and a_t sqrt(1-ab_t) + b_t = sqrt(1-ab_{t-1})
      CHECK(std::abs(s.a(t) * std::sqrt(s.alpha_bar(t)) - std::sqrt(s.alpha_bar(t - 1))) <= 1e-12);
      CHECK(std::abs(s.a(t) * std::sqrt(1.0 - s.alpha_bar(t)) + s.b(t) -
                     std::sqrt(1.0 - s.alpha_bar(t - 1))) <= 1e-12);
    }
    CHECK_THROWS_AS(s.a(0), DomainError);
    CHECK_THROWS_AS(s.alpha_bar(51), DomainError);
    CHECK(s.to_csv().rfind("t,alpha_bar,a,b\n", 0) == 0);
    CHECK_FALSE(s.mutated());
    CHECK(s.with_corrupted_signal_ratio(1.01).mutated());
  }

  TEST_CASE("schedule validation") {
    CHECK_THROWS_AS(NoiseSchedule::from_alpha_bar({0.9, 0.05}), DomainError);
    CHECK_THROWS_AS(NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.5, 0.05}), DomainError);
    CHECK_THROWS_AS(NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.3}), DomainError);
    CHECK_NOTHROW(NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.25, 0.05}));
  }

  TEST_CASE("forward noise") {
    const auto s = NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.25, 0.05});
    const Vector x0 = Vector::LinSpaced(3, 1.0, 3.0);
    CHECK(forward_noise(x0, 0, s, CounterRng(1)).x == x0);
    const Vector e1 = Vector::Unit(3, 0);
    const auto st = forward_noise(Vector::Zero(3), 2, s, e1);
    CHECK(st.t == 2);
    CHECK(st.x(0) == doctest::Approx(0.8660254037844386).epsilon(1e-15));
    CHECK(st.x.tail(2).norm() == 0.0);
    CHECK_THROWS_AS(forward_noise(x0, 4, s, CounterRng(1)), DomainError);
  }

  TEST_CASE("forward noise moments (Monte Carlo, 3 standard errors)") {
    const auto s = NoiseSchedule::linear(50);
    const int t = 20;
    const double ab = s.alpha_bar(t);
    const Vector x0(Eigen::Vector3d(1.0, -2.0, 0.5));
    const int n = 100000;
    Vector s1 = Vector::Zero(3);
    Matrix s2 = Matrix::Zero(3, 3);
    const CounterRng root(31);
    for (int k = 0; k < n; ++k) {
      const Vector r = forward_noise(x0, t, s, root.derive(static_cast<std::uint64_t>(k))).x -
                       std::sqrt(ab) * x0;
      s1 += r;
      s2 += r * r.transpose();
    }
    const double var = 1.0 - ab;
    const Vector mean = s1 / n;
    const Matrix cov = s2 / n - mean * mean.transpose();
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(mean(i)) <= 3.0 * std::sqrt(var / n));
      CHECK(std::abs(cov(i, i) - var) <= 3.0 * var * std::sqrt(2.0 / n));
      for (int k = i + 1; k < 3; ++k) CHECK(std::abs(cov(i, k)) <= 3.0 * var / std::sqrt(n));
    }
  }

  TEST_CASE("classifier-free guidance arithmetic") {
    const auto model = canonical_model();
    const auto sched = NoiseSchedule::linear(50);
    const GuidedDenoiser den(model, Condition::concept_of(model, "B"), sched);
    CHECK_FALSE(den.inert());
    const CounterRng rng(5);
    for (std::uint64_t k = 0; k < 20; ++k) {
      const Vector x = 2.0 * rng.normal_vector(k, 8);
      const int t = 1 + static_cast<int>(k % 50);
      const Vector eu = den.unconditional().eps(x, t);
      const Vector ec = den.conditional().eps(x, t);
      CHECK(cfg_eps(den, x, t, 0.0) == eu);
      CHECK(cfg_eps(den, x, t, 1.0) == ec);
      CHECK((cfg_eps(den, x, t, 5.0) - cfg_eps(den, x, t, 2.0) - 3.0 * (ec - eu))
                .cwiseAbs()
                .maxCoeff() <= 1e-12 * std::max(1.0, (ec - eu).norm()));
      // three-point collinearity in s
      const Vector p0 = cfg_eps(den, x, t, 1.5), p1 = cfg_eps(den, x, t, 4.0),
                   p2 = cfg_eps(den, x, t, 9.0);
      CHECK((p2 - p0 - (7.5 / 2.5) * (p1 - p0)).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, p2.norm()));
    }
  }

  TEST_CASE("single-component guidance is inert") {
    const auto model = single_gaussian(Vector::Zero(3), ar1(3, 1.0, 0.5));
    const GuidedDenoiser den(model, Condition::concept_of(model, "A"), NoiseSchedule::linear(50));
    CHECK(den.inert());
    const Vector x = Vector::Ones(3);
    CHECK(cfg_eps(den, x, 10, 7.0) == den.conditional().eps(x, 10));
  }

  TEST_CASE("ddim step") {
    const auto sched = NoiseSchedule::linear(50);
    const LatentState st{Vector::LinSpaced(4, -1.0, 1.0), 7};
    const auto next = ddim_step(st, Vector::Zero(4), sched);
    CHECK(next.t == 6);
    CHECK(next.x == sched.a(7) * st.x);
    CHECK_THROWS_AS(ddim_step({st.x, 0}, Vector::Zero(4), sched), DomainError);
  }

  TEST_CASE("reverse run with eps forced to zero") {
    const auto model = canonical_model();
    const auto sched = NoiseSchedule::linear(50);
    const GuidedDenoiser den(model, Condition::concept_of(model, "A"), sched);
    StepHooks hooks;
    hooks.on_eps = [](int, const Vector&, Vector& eps) { eps.setZero(); };
    const Vector x = Vector::Ones(8);
    const auto r = reverse_run({x, 1}, den, 1.0, hooks);
    CHECK(r.x0_hat == sched.a(1) * x);
    CHECK_THROWS_AS(reverse_run({x, 0}, den, 1.0), DomainError);
  }

  TEST_CASE("hooks can abort a run") {
    const auto model = canonical_model();
    const GuidedDenoiser den(model, Condition::concept_of(model, "A"), NoiseSchedule::linear(50));
    StepHooks hooks;
    hooks.on_state = [](int t, const Vector&, Vector&) {
      if (t == 5) throw HookAbort("stop");
    };
    CHECK_THROWS_AS(reverse_run({Vector::Zero(8), 10}, den, 1.0, hooks), HookAbort);
  }

  TEST_CASE("single Gaussian reverse run matches the closed-form affine iteration") {
    // isotropic N(mu, sigma^2 I): eps(x) = sqrt(1-ab) (x - sqrt(ab) mu) / (ab sigma^2 + 1 - ab)
    const double sigma2 = 0.49;
    const Vector mu = Vector::LinSpaced(3, -1.0, 2.0);
    const auto model = single_gaussian(mu, sigma2 * Matrix::Identity(3, 3));
    const auto sched = NoiseSchedule::linear(50);
    const GuidedDenoiser den(model, Condition::concept_of(model, "A"), sched);
    const CounterRng rng(44);
    for (std::uint64_t k = 0; k < 10; ++k) {
      const int t0 = 5 + static_cast<int>(k) * 4;
      const Vector x_init = 3.0 * rng.normal_vector(k, 3);
      Vector x = x_init;
      for (int t = t0; t >= 1; --t) {
        const double ab = sched.alpha_bar(t), abp = sched.alpha_bar(t - 1);
        const double a = std::sqrt(abp / ab);
        const double b = std::sqrt(1.0 - abp) - a * std::sqrt(1.0 - ab);
        const Vector eps = std::sqrt(1.0 - ab) * (x - std::sqrt(ab) * mu) / (ab * sigma2 + 1.0 - ab);
        x = a * x + b * eps;
      }
      const auto run = reverse_run({x_init, t0}, den, 1.0);
      CHECK((run.x0_hat - x).norm() <= 1e-12 * std::max(1.0, x.norm()));
      // contraction toward the mode relative to the rescaled start
      const double ab0 = sched.alpha_bar(t0);
      CHECK((run.x0_hat - mu).norm() < (x_init - std::sqrt(ab0) * mu).norm() / std::sqrt(ab0));
    }
  }

  TEST_CASE("reverse runs are deterministic and equal the composed steps") {
    const auto model = canonical_model();
    const auto sched = NoiseSchedule::linear(50);
    const GuidedDenoiser den(model, Condition::concept_of(model, "B"), sched);
    const Vector x = CounterRng(3).normal_vector(0, 8);
    const auto r1 = reverse_run({x, 30}, den, 6.0);
    const auto r2 = reverse_run({x, 30}, den, 6.0);
    REQUIRE(r1.trajectory.states.size() == 31);
    for (std::size_t i = 0; i < r1.trajectory.states.size(); ++i) {
      CHECK(r1.trajectory.states[i].x == r2.trajectory.states[i].x);
    }
    LatentState st{x, 30};
    while (st.t > 0) st = ddim_step(st, cfg_eps(den, st.x, st.t, 6.0), sched);
    CHECK(st.x == r1.x0_hat);
    CHECK_NOTHROW(r1.trajectory.validate());
    CHECK(r1.trajectory.to_csv().rfind("t,x_0,x_1,", 0) == 0);
  }

  TEST_CASE("trajectory validation") {
    Trajectory bad;
    bad.direction = Direction::Reverse;
    bad.states = {{Vector::Zero(2), 3}, {Vector::Zero(2), 3}};
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad.states = {{Vector::Zero(2), 3}, {Vector::Zero(3), 2}};
    CHECK_THROWS_AS(bad.validate(), DomainError);
  }

  TEST_CASE("edit parameter guards") {
    const auto sched = NoiseSchedule::linear(50);
    EditParams p;
    p.noise_level = 25;
    CHECK_NOTHROW(p.validate(sched));
    p.guidance_scale = 20.5;
    CHECK_THROWS_AS(p.validate(sched), DomainError);
    p.guidance_scale = 3.0;
    p.steps = 26;
    CHECK_THROWS_AS(p.validate(sched), DomainError);
    p.steps = 0;
    p.noise_level = 51;
    CHECK_THROWS_AS(p.validate(sched), DomainError);
  }

  TEST_CASE("inversion round trip on single Gaussians") {
    const auto sched = NoiseSchedule::linear(50);
    const auto model = single_gaussian(Vector::LinSpaced(6, -0.5, 0.5), ar1(6, 1.3, 0.5));
    const GuidedDenoiser den(model, Condition::concept_of(model, "A"), sched);
    const CounterRng rng(8);
    for (int t0 : {1, 10, 25, 50}) {
      const Vector x0 = rng.normal_vector(static_cast<std::uint64_t>(t0), 6);
      const auto inv = ddim_invert(x0, den.conditional(), t0, 50);
      CHECK(inv.direction == Direction::Forward);
      CHECK(inv.back().t == t0);
      const auto rec = reverse_run(inv.back(), den, 1.0);
      CHECK((rec.x0_hat - x0).norm() <= 1e-8);
    }
    const auto trivial = ddim_invert(Vector::Ones(6), den.conditional(), 0, 50);
    CHECK(trivial.states.size() == 1);
    CHECK(trivial.front().x == Vector::Ones(6));
  }

  TEST_CASE("unrefined inversion leaves a positive error on a mixture") {
    const auto model = canonical_model();
    const auto sched = NoiseSchedule::linear(50);
    const GuidedDenoiser den(model, Condition::unconditional(model), sched);
    // a point between the two components, where eps is far from linear
    const Vector x0 = 0.5 * (model.components()[0].mean + model.components()[1].mean);
    auto err = [&](int refine) {
      const auto inv = ddim_invert(x0, den.conditional(), 25, refine);
      return (reverse_run(inv.back(), den, 1.0).x0_hat - x0).norm();
    };
    const double raw = err(0), refined = err(50);
    CHECK(raw > 0.0);
    CHECK(raw > refined);
  }
}
