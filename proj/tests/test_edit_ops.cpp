#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "editlab/edit_ops.hpp"
#include "editlab/errors.hpp"
#include "support.hpp"

using namespace editlab;
using namespace editlab::testing;

namespace {

const RegionMask kHalf8({true, true, true, true, false, false, false, false});

Vector draw_from(const MixtureModel& model, const std::string& label, std::uint64_t k) {
  return noised_mixture(model, Condition::concept_of(model, label), 1.0).sample(CounterRng(k), 0);
}

EditRequest request_to(const MixtureModel& model, const std::string& label,
                       std::optional<RegionMask> mask = std::nullopt) {
  EditRequest r;
  r.instruction = Condition::concept_of(model, label);
  r.mask = std::move(mask);
  return r;
}

EditParams params(double s, int t0, std::uint64_t seed = 0) {
  EditParams p;
  p.guidance_scale = s;
  p.noise_level = t0;
  p.seed = seed;
  return p;
}

// Two diagonal components that differ only on coordinates 0..1; the density
// factorizes across the {0,1} / {2,3} split, so the step has no coupling.
MixtureModel factorized_model() {
  const Vector var(Eigen::Vector4d(0.8, 1.2, 0.7, 1.5));
  return MixtureModel({{0.5, Vector(Eigen::Vector4d(-2, -2, 0.5, -0.5)), var.asDiagonal()},
                       {0.5, Vector(Eigen::Vector4d(2, 2, 0.5, -0.5)),
                        Vector(Eigen::Vector4d(0.6, 0.9, 0.7, 1.5)).asDiagonal()}},
                      {{"A", {0}}, {"B", {1}}});
}

}  // namespace

TEST_SUITE("edit_ops") {
  TEST_CASE("masked update examples") {
    const Vector x = Vector::LinSpaced(8, 1.0, 8.0);
    const Vector delta = Vector::Constant(8, 0.25);
    const Vector anchor = Vector::Constant(8, -3.0);
    const auto all = RegionMask::all(8, true);
    CHECK(masked_update(x, all, delta, anchor, MaskMode::Hard) == x + delta);
    const Vector proj = masked_update(x, kHalf8, Vector::Zero(8), anchor, MaskMode::Hard);
    CHECK(proj.head(4) == x.head(4));
    CHECK(proj.tail(4) == anchor.tail(4));
    const Vector soft = masked_update(x, kHalf8, delta, anchor, MaskMode::Soft);
    CHECK(soft == x + kHalf8.weights().cwiseProduct(delta));
    // proximal pull toward the anchor with weight 1 lands halfway
    const Vector pulled = masked_update(x, kHalf8, delta, anchor, MaskMode::Soft, 1.0);
    CHECK(pulled.tail(4) == 0.5 * (x.tail(4) + anchor.tail(4)));
  }

  TEST_CASE("hard update locks outside coordinates bit-exactly at random probes") {
    const CounterRng rng(19);
    for (std::uint64_t k = 0; k < 200; ++k) {
      const CounterRng r = rng.derive(k);
      std::vector<bool> bits(10);
      for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = r.uniform(0, i) < 0.5;
      const RegionMask m(bits);
      const Vector anchor = 1e3 * r.normal_vector(1, 10);
      const Vector out = masked_update(r.normal_vector(2, 10), m, r.normal_vector(3, 10), anchor,
                                       MaskMode::Hard);
      for (auto i : m.outside()) CHECK(out(i) == anchor(i));
    }
  }

  TEST_CASE("mask modes parse") {
    CHECK(mask_mode_from_string("hard") == MaskMode::Hard);
    CHECK(to_string(MaskMode::Soft) == "soft");
    CHECK_THROWS_AS(mask_mode_from_string("fuzzy"), ConfigError);
  }

  TEST_CASE("objective terms") {
    const auto model = canonical_model();
    const Vector x0 = draw_from(model, "A", 1);
    EditRequest req = request_to(model, "B", kHalf8);
    ObjectiveContext ctx{&model, nullptr, std::nullopt};

    ObjectiveWeights w{0.0, 1.0, 1.0, 0.0};
    const auto t = edit_objective(x0, x0, req, w, ctx);
    CHECK(t.pres == 0.0);
    CHECK(t.qual == doctest::Approx(-noised_mixture(model, Condition::unconditional(model), 1.0)
                                         .log_density(x0))
                        .epsilon(1e-14));

    Vector inside_only = x0;
    inside_only.head(4) += Vector::Constant(4, 2.0);
    CHECK(edit_objective(inside_only, x0, req, {0.0, 1.0, 0.0, 0.0}, ctx).total == 0.0);

    req.mask.reset();
    CHECK_THROWS_AS(edit_objective(x0, x0, req, {0.0, 1.0, 0.0, 0.0}, ctx), ConfigError);
    CHECK_THROWS_AS(edit_objective(x0, x0, req, {0.0, 0.0, 0.0, 0.0}, ctx), ConfigError);
  }

  TEST_CASE("anchors are forward-noised copies under the edit seed") {
    const auto sched = NoiseSchedule::linear(50);
    const Vector x0 = Vector::LinSpaced(5, -1.0, 1.0);
    const CounterRng rng = CounterRng(9).derive("anchor");
    const AnchorTrajectory anchor(x0, 20, sched, rng);
    CHECK(anchor.top() == 20);
    CHECK(anchor.at(0) == x0);
    for (int t = 1; t <= 20; ++t) CHECK(anchor.at(t) == forward_noise(x0, t, sched, rng).x);
    CHECK_THROWS_AS(anchor.at(21), DomainError);
  }

  TEST_CASE("edit-free round trip on a single Gaussian") {
    const auto model = single_gaussian(Vector::Constant(6, 0.25), ar1(6, 1.0, 0.5));
    const Editor editor(model, NoiseSchedule::linear(50));
    for (int t0 : {10, 25, 50}) {
      const Vector x0 = draw_from(model, "A", static_cast<std::uint64_t>(t0));
      const auto res = editor.invert_and_edit(x0, "A", request_to(model, "A"), params(1.0, t0),
                                              MaskMode::None);
      CHECK((res.x0_hat - x0).norm() <= 1e-6);
      CHECK(res.report.reverse_steps == t0);
      CHECK(res.report.metrics.locality_mse <= 1e-12);
    }
  }

  TEST_CASE("editing toward the other concept raises faithfulness") {
    const auto model = canonical_model();
    const Editor editor(model, NoiseSchedule::linear(50));
    const auto target = Condition::concept_of(model, "B");
    for (std::uint64_t k = 0; k < 10; ++k) {
      const Vector x0 = draw_from(model, "A", 100 + k);
      const auto res = editor.invert_and_edit(x0, "A", request_to(model, "B", kHalf8),
                                              params(6.0, 25, k), MaskMode::Soft);
      CHECK(faithfulness(res.x0_hat, target, model) > faithfulness(x0, target, model));
    }
  }

  TEST_CASE("hard mode locks every reverse state to the anchors") {
    const auto model = canonical_model();
    const auto sched = NoiseSchedule::linear(50);
    const Editor editor(model, sched);
    for (std::uint64_t k = 0; k < 20; ++k) {
      const Vector x0 = draw_from(model, "A", 300 + k);
      const int t0 = 5 + static_cast<int>(k % 40);
      const auto res = editor.invert_and_edit(x0, "A", request_to(model, "B", kHalf8),
                                              params(1.0 + static_cast<double>(k % 12), t0, k),
                                              MaskMode::Hard);
      const AnchorTrajectory anchor(x0, t0, sched, CounterRng(k).derive("anchor"));
      const auto& states = res.report.reverse.states;
      for (std::size_t i = 1; i < states.size(); ++i) {
        for (auto c : kHalf8.outside()) REQUIRE(states[i].x(c) == anchor.at(states[i].t)(c));
      }
      for (auto c : kHalf8.outside()) CHECK(res.x0_hat(c) == x0(c));
      CHECK(res.report.metrics.locality_mse == 0.0);
    }
  }

  TEST_CASE("hard mode with a shortened reverse run still locks the output") {
    const auto model = canonical_model();
    const Editor editor(model, NoiseSchedule::linear(50));
    const Vector x0 = draw_from(model, "A", 5);
    EditParams p = params(6.0, 30, 2);
    p.steps = 10;
    const auto res = editor.invert_and_edit(x0, "A", request_to(model, "B", kHalf8), p, MaskMode::Hard);
    CHECK(res.report.reverse_steps == 10);
    CHECK(res.report.metrics.locality_mse == 0.0);
  }

  TEST_CASE("soft mode does not leak without cross-region coupling") {
    const auto model = factorized_model();
    const RegionMask mask({true, true, false, false});
    const Editor editor(model, NoiseSchedule::linear(50));
    const Vector base = draw_from(model, "A", 4);
    Vector other = base;
    other.head(2) += Vector::Constant(2, 1.7);
    const auto r1 = editor.invert_and_edit(base, "A", request_to(model, "B", mask), params(6.0, 30, 1),
                                           MaskMode::Soft);
    const auto r2 = editor.invert_and_edit(other, "A", request_to(model, "B", mask),
                                           params(6.0, 30, 1), MaskMode::Soft);
    const auto& s1 = r1.report.reverse.states;
    const auto& s2 = r2.report.reverse.states;
    REQUIRE(s1.size() == s2.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < s1.size(); ++i) {
      worst = std::max(worst, (s1[i].x.tail(2) - s2[i].x.tail(2)).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-12);
    // the edit did move the inside coordinates
    CHECK((r1.x0_hat.head(2) - base.head(2)).norm() > 0.5);
  }

  TEST_CASE("drag window clipping") {
    CHECK(drag_window({1, 5}, 2, 8, false) == std::vector<Eigen::Index>{0, 1, 2, 3});
    CHECK(drag_window({1, 5}, 2, 8, true) == std::vector<Eigen::Index>{4, 5, 6, 7});
    CHECK(drag_window({0, 7}, 1, 8, true) == std::vector<Eigen::Index>{7});
  }

  TEST_CASE("drag spec validation") {
    DragSpec spec;
    spec.pairs = {{2, 2}};
    CHECK_THROWS_AS(spec.validate(8), DomainError);
    spec.pairs = {{2, 9}};
    CHECK_THROWS_AS(spec.validate(8), DomainError);
    spec.pairs = {{2, 4}};
    spec.step_size = 0.0;
    CHECK_THROWS_AS(spec.validate(8), DomainError);
    EditRequest empty;
    CHECK_THROWS_AS(empty.validate(), ConfigError);
  }

  TEST_CASE("drag with zero pairs is a plain reconstruction") {
    const auto model = canonical_model();
    const Editor editor(model, NoiseSchedule::linear(50));
    const Vector x0 = draw_from(model, "A", 8);
    DragSpec spec;
    const auto res = editor.drag_edit(x0, "A", spec, params(1.0, 10));
    const auto plain = editor.invert_and_edit(x0, "A", request_to(model, "A"), params(1.0, 10),
                                              MaskMode::None);
    CHECK(res.x0_hat == plain.x0_hat);
    CHECK(res.xi_final == res.xi_init);
    CHECK(res.iterations == 0);
  }

  TEST_CASE("drag on a single Gaussian converges") {
    const auto model = single_gaussian(Vector::Zero(8), ar1(8, 1.0, 0.3));
    const Editor editor(model, NoiseSchedule::linear(50));
    const Vector x0 = draw_from(model, "A", 12);
    DragSpec spec;
    spec.pairs = {{1, 5}};
    const auto res = editor.drag_edit(x0, "A", spec, params(1.0, 10));
    REQUIRE(!res.history.empty());
    CHECK(res.history.back().drag <= 0.1 * res.history.front().drag);
    CHECK(res.iterations <= 200);
    const std::string csv = res.history_csv();
    CHECK(csv.rfind("iteration,L_drag,L_pres,L_reg,total\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == res.iterations + 2);
  }

  TEST_CASE("drag objective decreases along the first iterations on the canonical model") {
    const auto model = canonical_model();
    const Editor editor(model, NoiseSchedule::linear(50));
    const Vector x0 = draw_from(model, "A", 21);
    DragSpec spec;
    spec.pairs = {{1, 5}};
    spec.iters = 10;
    const auto res = editor.drag_edit(x0, "A", spec, params(1.0, 10));
    REQUIRE(res.history.size() >= 2);
    for (std::size_t i = 1; i < res.history.size(); ++i) {
      CHECK(std::isfinite(res.history[i].total));
      CHECK(res.history[i].total < res.history[i - 1].total);
    }
  }

  TEST_CASE("a huge latent regularizer pins the latent") {
    const auto model = single_gaussian(Vector::Zero(8), ar1(8, 1.0, 0.3));
    const Editor editor(model, NoiseSchedule::linear(50));
    DragSpec spec;
    spec.pairs = {{1, 5}};
    spec.gamma = 1e6;
    spec.iters = 50;
    const auto res = editor.drag_edit(draw_from(model, "A", 3), "A", spec, params(1.0, 10));
    CHECK((res.xi_final - res.xi_init).norm() <= 1e-3);
  }

  TEST_CASE("stability policy must be conservative") {
    StabilityPolicy p;
    CHECK_NOTHROW(p.validate());
    p.guidance_factor = 1.2;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = {};
    p.preservation_factor = 0.5;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = {};
    p.threshold = 1.5;
    CHECK_THROWS_AS(p.validate(), ConfigError);
  }

  TEST_CASE("multi-turn editing") {
    const auto model = canonical_model();
    const Editor editor(model, NoiseSchedule::linear(50));
    const auto threshold = calibrate_artifact_threshold(model, 5, 2000);
    const Vector x0 = draw_from(model, "A", 77);

    SUBCASE("edit-free single turn keeps similarity 1") {
      const auto single = single_gaussian(Vector::Zero(8), ar1(8, 1.0, 0.5));
      const Editor e1(single, NoiseSchedule::linear(50));
      const auto th = calibrate_artifact_threshold(single, 5, 1000);
      const auto res = e1.iterative_edit(draw_from(single, "A", 2), "A", {request_to(single, "A")},
                                         params(1.0, 25), MaskMode::None, {}, th);
      REQUIRE(res.records.size() == 2);
      CHECK(std::abs(res.records[1].stability - 1.0) <= 1e-9);
      CHECK_FALSE(res.records[1].retried);
      CHECK(res.records[0].drift == 0.0);
    }

    SUBCASE("threshold 0 equals plain sequential editing") {
      StabilityPolicy off;
      off.threshold = 0.0;
      std::vector<EditRequest> reqs{request_to(model, "B", kHalf8), request_to(model, "A", kHalf8),
                                    request_to(model, "B", kHalf8)};
      const auto p = params(12.0, 28, 4);
      const auto res = editor.iterative_edit(x0, "A", reqs, p, MaskMode::Soft, off, threshold);
      Vector x = x0;
      std::string src = "A";
      for (const auto& r : reqs) {
        x = editor.invert_and_edit(x, src, r, p, MaskMode::Soft).x0_hat;
        src = r.instruction->label();
      }
      CHECK(res.final_image == x);
      for (const auto& rec : res.records) CHECK_FALSE(rec.retried);
    }

    SUBCASE("deterministic, non-negative drift") {
      std::vector<EditRequest> reqs(5, request_to(model, "B", kHalf8));
      const auto p = params(12.0, 28, 9);
      const auto a = editor.iterative_edit(x0, "A", reqs, p, MaskMode::Soft, {}, threshold);
      const auto b = editor.iterative_edit(x0, "A", reqs, p, MaskMode::Soft, {}, threshold);
      CHECK(a.records_csv() == b.records_csv());
      REQUIRE(a.records.size() == 6);
      for (const auto& r : a.records) CHECK(r.drift >= 0.0);
      CHECK(a.records_csv().rfind("turn,faithfulness,consistency,stability,drift,retried,artifact\n", 0) == 0);
    }

    SUBCASE("turn count guard") {
      std::vector<EditRequest> many(17, request_to(model, "B", kHalf8));
      CHECK_THROWS_AS(editor.iterative_edit(x0, "A", many, params(3.0, 10), MaskMode::Soft, {}, threshold),
                      ConfigError);
      CHECK_THROWS_AS(editor.iterative_edit(x0, "A", {}, params(3.0, 10), MaskMode::Soft, {}, threshold),
                      ConfigError);
    }
  }
}
