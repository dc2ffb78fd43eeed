#include <catch2/catch.hpp>

#include <cmath>
#include <vector>

#include "test_helpers.hpp"
#include "weakcorr/clock_detector.hpp"
#include "weakcorr/correlator.hpp"

using namespace weakcorr;
using SO = ScheduledObservable;

namespace {

ModelBundle qubit() {
  ModelSpec s;
  s.kind = ModelKind::TwoLevel;
  return build(s);
}

ModelBundle trap(int n = 10) {
  ModelSpec s;
  s.kind = ModelKind::PlanarTrap;
  s.truncation = n;
  return build(s);
}

double engine_moment(const ModelBundle& b, const State& st,
                     const std::vector<SO>& schedule) {
  CorrelatorRequest req{schedule, st, b.hamiltonian};
  return weak_moment(req);
}

}  // namespace

TEST_CASE("identity kick displaces the detector rigidly by g") {
  const ModelBundle b = qubit();
  const double g = 0.37;
  const EffectiveKick kick =
      integrate_clock_kick(DetectorSpec{}, ClockKick{0.0, Operator::identity(2), g});
  const State th = thermal_state(b.hamiltonian, 1.0);
  REQUIRE(kick.detector_moment(th, 1) == Approx(g).margin(1e-12));
}

TEST_CASE("position kick on the ground state leaves the detector centered") {
  const ModelBundle b = qubit();
  const EffectiveKick kick =
      integrate_clock_kick(DetectorSpec{}, ClockKick{0.0, b.observable("X"), 0.01});
  REQUIRE(std::abs(kick.detector_moment(ground_state(b), 1)) < 1e-8);
}

TEST_CASE("energy kick reads out g<H> exactly in the instantaneous-kick limit") {
  const ModelBundle b = qubit();
  const State th = thermal_state(b.hamiltonian, 1.0);
  const double h_mean = expectation(b.observable("H"), th);
  for (double g : {0.04, 0.02, 0.01}) {
    const EffectiveKick kick =
        integrate_clock_kick(DetectorSpec{}, ClockKick{0.0, b.observable("H"), g});
    REQUIRE(std::abs(kick.detector_moment(th, 1) / g - h_mean) < 1e-12);
  }
}

TEST_CASE("detector marginal is an exact mixture of displaced Gaussians") {
  const ModelBundle b = qubit();
  const State th = thermal_state(b.hamiltonian, 1.0);  // commutes with H
  const double g = 0.4;
  const DetectorSpec spec;
  const EffectiveKick kick = integrate_clock_kick(spec, ClockKick{0.0, b.observable("H"), g});
  const RealVector marginal = kick.detector_marginal(th);
  const double p_plus = std::exp(-1.0) / (1.0 + std::exp(-1.0));
  for (int i = 0; i < spec.n_grid; i += 7) {
    const double x = spec.grid_point(i);
    const double expected = (1.0 - p_plus) * std::pow(DetectorSpec::psi(x), 2) +
                            p_plus * std::pow(DetectorSpec::psi(x - g), 2);
    REQUIRE(marginal(i) == Approx(expected).margin(1e-8));
  }
}

TEST_CASE("joint state stays normalized through kicks and free evolution") {
  const ModelBundle b = qubit();
  const State th = thermal_state(b.hamiltonian, 0.7);
  const std::vector<ClockKick> kicks{{0.0, b.observable("X"), 0.05},
                                     {0.8, b.observable("H"), 0.05},
                                     {1.7, b.observable("X"), 0.05}};
  const ClockRunResult res = sequential_clock_run(th, kicks, b.hamiltonian);
  REQUIRE(std::abs(res.final_trace - 1.0) < 1e-10);
}

TEST_CASE("three qubit kicks reproduce the engine correlator to O(g^2)") {
  const ModelBundle b = qubit();
  const State gs = ground_state(b);
  const double tau = 0.9;
  // ordering with the energy kick in the middle: nonzero engine value
  const std::vector<SO> schedule{SO{0.0, b.observable("X"), 1}, SO{1e-6, b.observable("H"), 1},
                                 SO{tau, b.observable("X"), 1}};
  const double exact = engine_moment(b, gs, schedule);
  auto scaled_error = [&](double g) {
    const std::vector<ClockKick> kicks{{0.0, b.observable("X"), g},
                                       {1e-6, b.observable("H"), g},
                                       {tau, b.observable("X"), g}};
    const ClockRunResult res = sequential_clock_run(gs, kicks, b.hamiltonian);
    return std::abs(res.cumulative_moments[2] / (g * g * g) - exact) / std::abs(exact);
  };
  const double rel_02 = scaled_error(0.02);
  const double rel_01 = scaled_error(0.01);
  REQUIRE(rel_02 < 0.01);
  REQUIRE(rel_01 < rel_02 / 3.0);  // O(g^2) residual shrinks about 4x
}

TEST_CASE("swapping the energy kick across the position kick reproduces the jump") {
  const ModelBundle b = qubit();
  const State gs = ground_state(b);
  const double tau = 0.9, g = 0.02;
  const std::vector<ClockKick> q_first{{-1e-6, b.observable("H"), g},
                                       {0.0, b.observable("X"), g},
                                       {tau, b.observable("X"), g}};
  const std::vector<ClockKick> q_second{{0.0, b.observable("X"), g},
                                        {1e-6, b.observable("H"), g},
                                        {tau, b.observable("X"), g}};
  const double diff =
      (sequential_clock_run(gs, q_first, b.hamiltonian).cumulative_moments[2] -
       sequential_clock_run(gs, q_second, b.hamiltonian).cumulative_moments[2]) /
      (g * g * g);
  const JumpReport rep = jump(b.observable("H"), SO{0.0, b.observable("X"), 1},
                              SO{tau, b.observable("X"), 1}, gs, b.hamiltonian);
  REQUIRE(diff == Approx(rep.jump_value).epsilon(0.01));
}

TEST_CASE("commuting kicks are order-independent") {
  const ModelBundle b = qubit();
  const State th = thermal_state(b.hamiltonian, 1.0);
  const double g = 0.05;
  // both kicks couple the conserved H; the joint moment cannot depend on the
  // scheduling of the two detectors
  const std::vector<ClockKick> ab{{0.2, b.observable("H"), g}, {0.9, b.observable("H"), g}};
  const std::vector<ClockKick> shifted{{1.5, b.observable("H"), g},
                                       {3.1, b.observable("H"), g}};
  const ClockRunResult r1 = sequential_clock_run(th, ab, b.hamiltonian);
  const ClockRunResult r2 = sequential_clock_run(th, shifted, b.hamiltonian);
  REQUIRE(std::abs(r1.cumulative_moments[1] - r2.cumulative_moments[1]) < 1e-10);
  // and both single-kick means agree with g<H>
  const double h_mean = expectation(b.observable("H"), th);
  REQUIRE(r1.single_moments[0] == Approx(g * h_mean).margin(1e-10));
  REQUIRE(r1.single_moments[1] == Approx(g * h_mean).margin(1e-10));
}

TEST_CASE("second-kick readout converges at second order in g") {
  // a preceding non-commuting kick perturbs the later readout at O(g^2)
  const ModelBundle b = qubit();
  const State gs = ground_state(b);
  auto deviation = [&](double g) {
    const std::vector<ClockKick> kicks{{0.0, b.observable("X"), g},
                                       {0.9, b.observable("H"), g}};
    const ClockRunResult res = sequential_clock_run(gs, kicks, b.hamiltonian);
    return std::abs(res.single_moments[1] / g -
                    expectation(b.observable("H"), gs));
  };
  const double d4 = deviation(0.04);
  const double d2 = deviation(0.02);
  const double d1 = deviation(0.01);
  REQUIRE(d4 / d2 == Approx(4.0).epsilon(0.25));
  REQUIRE(d2 / d1 == Approx(4.0).epsilon(0.25));
}

TEST_CASE("planar angular-momentum kick sequence matches the engine") {
  const ModelBundle b = trap();
  const State gs = ground_state(b);
  const double t2 = 0.4, t1 = 0.8, t3 = 1.3, g = 0.02;
  const std::vector<SO> schedule{SO{t2, b.observable("X"), 1}, SO{t1, b.observable("Lz"), 1},
                                 SO{t3, b.observable("Y"), 1}};
  const double exact = engine_moment(b, gs, schedule);
  const std::vector<ClockKick> kicks{{t2, b.observable("X"), g},
                                     {t1, b.observable("Lz"), g},
                                     {t3, b.observable("Y"), g}};
  const ClockRunResult res = sequential_clock_run(gs, kicks, b.hamiltonian);
  REQUIRE(res.cumulative_moments[2] / (g * g * g) == Approx(exact).epsilon(0.01));
}

TEST_CASE("grid validation rejects unresolvable kicks") {
  DetectorSpec coarse;
  coarse.n_grid = 32;  // dx = 0.5, far coarser than the Gaussian width
  REQUIRE_THROWS_WITH(coarse.validate(), Catch::Contains("too coarse"));
  const ModelBundle b = qubit();
  // displacement beyond the grid range
  REQUIRE_THROWS_WITH(
      integrate_clock_kick(DetectorSpec{}, ClockKick{0.0, b.observable("H"), 5.0}),
      Catch::Contains("displacement"));
}

TEST_CASE("memory budget rejection reports the size estimate") {
  const ModelBundle b = trap(10);
  const State gs = ground_state(b);
  const std::vector<ClockKick> kicks{{0.0, b.observable("X"), 0.02}};
  REQUIRE_THROWS_WITH(sequential_clock_run(gs, kicks, b.hamiltonian, DetectorSpec{}, 0.05),
                      Catch::Contains("memory budget exceeded"));
}

TEST_CASE("isotropic xy kick on the ground state reads zero on both axes") {
  const ModelBundle b = trap(8);
  const State gs = ground_state(b);
  const std::vector<MixedKick> kicks{
      MixedKick{0.0, 0.02, true, Operator::identity(1), XYReadout::X, false}};
  const XYRunResult rx = rotation_invariant_xy_run(gs, kicks, b);
  REQUIRE(std::abs(rx.readout_product) < 1e-8);
  const std::vector<MixedKick> kicks_y{
      MixedKick{0.0, 0.02, true, Operator::identity(1), XYReadout::Y, false}};
  const XYRunResult ry = rotation_invariant_xy_run(gs, kicks_y, b);
  REQUIRE(std::abs(ry.readout_product) < 1e-8);
}

TEST_CASE("isotropic coupling still reproduces the angular-momentum jump") {
  const ModelBundle b = trap(8);
  const State gs = ground_state(b);
  const double t2 = 0.4, t3 = 1.3, g = 0.02;
  auto product = [&](double t_lz) {
    std::vector<MixedKick> kicks;
    MixedKick lz_kick;
    lz_kick.g = g;
    lz_kick.isotropic = false;
    lz_kick.observable = b.observable("Lz");
    lz_kick.read_single = true;
    lz_kick.time = t_lz;
    MixedKick x_kick;
    x_kick.time = t2;
    x_kick.g = g;
    x_kick.isotropic = true;
    x_kick.readout = XYReadout::X;
    MixedKick y_kick;
    y_kick.time = t3;
    y_kick.g = g;
    y_kick.isotropic = true;
    y_kick.readout = XYReadout::Y;
    if (t_lz < t2) {
      kicks = {lz_kick, x_kick, y_kick};
    } else {
      kicks = {x_kick, lz_kick, y_kick};
    }
    return rotation_invariant_xy_run(gs, kicks, b).readout_product / (g * g * g);
  };
  const double before = product(0.1);
  const double after = product(0.8);
  const JumpReport rep = jump(b.observable("Lz"), SO{t2, b.observable("X"), 1},
                              SO{t3, b.observable("Y"), 1}, gs, b.hamiltonian);
  REQUIRE((before - after) == Approx(rep.jump_value).epsilon(0.01));
}

TEST_CASE("total angular momentum is balanced between system and detector") {
  const ModelBundle b = trap(8);
  const State th = thermal_state(b.hamiltonian, 0.8);
  const double g = 0.1;
  const std::vector<MixedKick> kicks{
      MixedKick{0.0, g, true, Operator::identity(1), XYReadout::None, false}};
  const double lz_before = expectation(b.observable("Lz"), th);
  const XYRunResult res = rotation_invariant_xy_run(th, kicks, b);
  const double system_change = res.lz_system[0] - lz_before;
  REQUIRE(system_change + res.lz_detector[0] == Approx(0.0).margin(1e-8));
}
