#include <catch2/catch.hpp>

#include <cmath>
#include <cstdlib>
#include <vector>

#include "test_helpers.hpp"
#include "weakcorr/measurement.hpp"
#include "weakcorr/models.hpp"

using namespace weakcorr;
using SO = ScheduledObservable;

namespace {

ModelBundle qubit() {
  ModelSpec s;
  s.kind = ModelKind::TwoLevel;
  return build(s);
}

}  // namespace

TEST_CASE("eigenstate outcomes are Gaussian around the eigenvalue") {
  const ModelBundle b = qubit();
  // |+> eigenstate of X with eigenvalue +1
  Vector plus(2);
  plus << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
  const State st = State::pure(plus);
  MeasurementConfig cfg;
  cfg.g = 0.25;  // noise variance 1/4g = 1
  RngStream rng(100, 0);
  const int n = 20000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const WeakOutcome out = apply_weak_measurement(st, b.observable("X"), cfg, rng);
    sum += out.outcome;
    sum2 += out.outcome * out.outcome;
    // posterior of an eigenstate is untouched
    REQUIRE(max_abs(out.posterior.rho() - st.rho()) < 1e-12);
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  REQUIRE(mean == Approx(1.0).margin(4.0 / std::sqrt(static_cast<double>(n))));
  REQUIRE(var == Approx(1.0).epsilon(0.05));
}

TEST_CASE("outcome density integrates to one") {
  const ModelBundle b = qubit();
  const State th = thermal_state(b.hamiltonian, 1.0);
  const double g = 0.1;
  // composite Simpson over the support of the two-component mixture
  const double lo = -1.0 - 10.0 / std::sqrt(4.0 * g), hi = 1.0 + 10.0 / std::sqrt(4.0 * g);
  const int n = 20001;
  const double hstep = (hi - lo) / (n - 1);
  double integral = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = (i == 0 || i == n - 1) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    integral += w * outcome_density(th, b.observable("X"), g, lo + i * hstep);
  }
  integral *= hstep / 3.0;
  REQUIRE(integral == Approx(1.0).margin(1e-10));
}

TEST_CASE("unconditioned posterior reproduces the double-commutator invasiveness") {
  const ModelBundle b = qubit();
  const State gs = ground_state(b);
  const Operator& x = b.observable("X");
  auto first_order_error = [&](double g) {
    const State avg = averaged_post_measurement(gs, x, g);
    const Matrix double_comm =
        x.entries() * (x.entries() * gs.rho()) - 2.0 * x.entries() * gs.rho() * x.entries() +
        (gs.rho() * x.entries()) * x.entries();
    const Matrix predicted = gs.rho() - 0.5 * g * double_comm;
    return max_abs(avg.rho() - predicted);
  };
  const double e1 = first_order_error(0.1);
  const double e2 = first_order_error(0.05);
  REQUIRE(e1 / e2 == Approx(4.0).epsilon(0.15));  // the residual is O(g^2)
}

TEST_CASE("monte carlo averaged posterior matches the deterministic average") {
  const ModelBundle b = qubit();
  const State gs = ground_state(b);
  MeasurementConfig cfg;
  cfg.g = 0.2;
  RngStream rng(101, 0);
  Matrix acc = Matrix::Zero(2, 2);
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    acc += apply_weak_measurement(gs, b.observable("X"), cfg, rng).posterior.rho();
  }
  acc /= static_cast<double>(n);
  const State expected = averaged_post_measurement(gs, b.observable("X"), cfg.g);
  REQUIRE(max_abs(acc - expected.rho()) < 0.01);
}

TEST_CASE("single weak position measurement on the ground state averages to zero") {
  const ModelBundle b = qubit();
  MeasurementConfig cfg;
  cfg.g = 0.05;
  cfg.n_trajectories = 200000;
  cfg.seed = 7;
  const TrajectoryBatch batch =
      run_sequence(ground_state(b), {SO{0.0, b.observable("X"), 1}}, b.hamiltonian, cfg);
  REQUIRE(std::abs(batch.moment({1})) < 3.0 * batch.moment_stderr({1}));
}

TEST_CASE("deconvolution removes the exact Gaussian noise moments") {
  const ModelBundle b = qubit();
  Vector plus(2);
  plus << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
  const State st = State::pure(plus);
  MeasurementConfig cfg;
  cfg.g = 0.1;
  cfg.n_trajectories = 200000;
  cfg.seed = 11;
  SequenceOptions opts;
  opts.max_powers = {2};
  const TrajectoryBatch batch =
      run_sequence(st, {SO{0.0, b.observable("X"), 1}}, b.hamiltonian, cfg, opts);
  const DeconvolvedMoment m2 = deconvolve_moments(batch, cfg, {2});
  // eigenstate: corrected second moment -> lambda^2 = 1, raw is 1 + 1/4g
  REQUIRE(batch.moment({2}) == Approx(1.0 + noise_variance(cfg.g)).epsilon(0.02));
  REQUIRE(m2.value == Approx(1.0).margin(3.0 * m2.stderr));
  REQUIRE_THROWS_WITH(deconvolve_moments(batch, cfg, {5}), Catch::Contains("unsupported"));
}

TEST_CASE("first-power product moments need no correction") {
  const ModelBundle b = qubit();
  const State th = thermal_state(b.hamiltonian, 1.0);
  MeasurementConfig cfg;
  cfg.g = 0.05;
  cfg.n_trajectories = 50000;
  cfg.seed = 13;
  const TrajectoryBatch batch = run_sequence(
      th, {SO{0.0, b.observable("H"), 1}, SO{0.4, b.observable("X"), 1},
           SO{1.0, b.observable("X"), 1}},
      b.hamiltonian, cfg);
  const DeconvolvedMoment m = deconvolve_moments(batch, cfg, {1, 1, 1});
  REQUIRE(m.value == Approx(batch.moment({1, 1, 1})).margin(1e-14));
}

TEST_CASE("deconvolved third moment converges to the engine value as g shrinks") {
  const ModelBundle b = qubit();
  const State th = thermal_state(b.hamiltonian, 1.0);
  const double tau = 0.9;
  std::vector<SO> schedule{SO{-1e-6, b.observable("H"), 1}, SO{0.0, b.observable("X"), 1},
                           SO{tau, b.observable("X"), 1}};
  CorrelatorRequest req{schedule, th, b.hamiltonian};
  const double exact = weak_moment(req);
  SequenceOptions opts;
  opts.rb_last = true;
  opts.antithetic_slots = 2;
  auto run_at = [&](double g) {
    MeasurementConfig cfg;
    cfg.g = g;
    cfg.n_trajectories = 1 << 21;
    cfg.seed = 17;
    const TrajectoryBatch batch = run_sequence(th, schedule, b.hamiltonian, cfg, opts);
    return deconvolve_moments(batch, cfg, {1, 1, 1});
  };
  const DeconvolvedMoment at_g = run_at(0.2);
  const DeconvolvedMoment at_half = run_at(0.1);
  const double err_g = std::abs(at_g.value - exact);
  const double err_half = std::abs(at_half.value - exact);
  // O(g) bias: the error roughly halves when g is halved
  REQUIRE(err_g / err_half == Approx(2.0).epsilon(0.5));
  REQUIRE(err_half < 3.0 * at_half.stderr + 1.0 * 0.1);
}

TEST_CASE("standard error of the three-point estimator scales as g^{-3/2}") {
  const ModelBundle b = qubit();
  const State th = thermal_state(b.hamiltonian, 1.0);
  std::vector<SO> schedule{SO{-1e-6, b.observable("H"), 1}, SO{0.0, b.observable("X"), 1},
                           SO{0.9, b.observable("X"), 1}};
  auto se_at = [&](double g) {
    MeasurementConfig cfg;
    cfg.g = g;
    cfg.n_trajectories = 100000;
    cfg.seed = 19;
    const TrajectoryBatch batch = run_sequence(th, schedule, b.hamiltonian, cfg);
    return batch.moment_stderr({1, 1, 1});
  };
  const double ratio = se_at(0.002) / se_at(0.02);
  // one decade in g: 10^{3/2} about 31.6, within batch-means noise
  REQUIRE(ratio > 20.0);
  REQUIRE(ratio < 50.0);
}

TEST_CASE("swapping the energy slot across the position slot reproduces the jump") {
  const ModelBundle b = qubit();
  const State th = thermal_state(b.hamiltonian, 1.0);
  const double tau = 0.9;
  const JumpReport jr = jump(b.observable("H"), SO{0.0, b.observable("X"), 1},
                             SO{tau, b.observable("X"), 1}, th, b.hamiltonian);
  MeasurementConfig cfg;
  cfg.g = 0.1;
  cfg.n_trajectories = 400000;
  cfg.seed = 5;
  SequenceOptions opts;
  opts.rb_last = true;
  opts.antithetic_slots = 2;
  const TrajectoryBatch before = run_sequence(
      th, {SO{-1e-6, b.observable("H"), 1}, SO{0.0, b.observable("X"), 1},
           SO{tau, b.observable("X"), 1}},
      b.hamiltonian, cfg, opts);
  const TrajectoryBatch after = run_sequence(
      th, {SO{0.0, b.observable("X"), 1}, SO{1e-6, b.observable("H"), 1},
           SO{tau, b.observable("X"), 1}},
      b.hamiltonian, cfg, opts);
  const double est = before.moment({1, 1, 1}) - after.moment({1, 1, 1});
  const double se = std::sqrt(std::pow(before.moment_stderr({1, 1, 1}), 2) +
                              std::pow(after.moment_stderr({1, 1, 1}), 2));
  REQUIRE(std::abs(est - jr.jump_value) <= 3.0 * se + 0.5 * cfg.g);
}

TEST_CASE("joint sixth-order spread moment matches the engine expansion") {
  // <(q-q')^2 x^2 y^2> on the trap, expanded termwise with q and q' on their
  // own slots; nonzero even for conserved Lz because x is probed in between
  ModelSpec ms;
  ms.kind = ModelKind::PlanarTrap;
  ms.truncation = 8;
  const ModelBundle b = build(ms);
  const State gs = ground_state(b);
  const double t1 = 0.0, t2 = 0.3, t1p = 0.8, t3 = 0.3 + pi / 2.0;
  const Operator& lz = b.observable("Lz");
  const Operator& x = b.observable("X");
  const Operator& y = b.observable("Y");
  auto wm = [&](std::vector<SO> s) {
    CorrelatorRequest r{std::move(s), gs, b.hamiltonian};
    return weak_moment(r);
  };
  const double engine = wm({SO{t1, lz, 2}, SO{t2, x, 2}, SO{t3, y, 2}}) -
                        2.0 * wm({SO{t1, lz, 1}, SO{t2, x, 2}, SO{t1p, lz, 1},
                                  SO{t3, y, 2}}) +
                        wm({SO{t2, x, 2}, SO{t1p, lz, 2}, SO{t3, y, 2}});
  MeasurementConfig cfg;
  cfg.g = 0.02;
  cfg.n_trajectories = 400000;
  cfg.seed = 99;
  SequenceOptions opts;
  opts.rb_last = true;
  opts.antithetic_slots = 3;
  opts.max_powers = {2, 2, 2, 2};
  const TrajectoryBatch batch = run_sequence(
      gs, {SO{t1, lz, 1}, SO{t2, x, 1}, SO{t1p, lz, 1}, SO{t3, y, 1}}, b.hamiltonian, cfg,
      opts);
  const DeconvolvedMoment d1 = deconvolve_moments(batch, cfg, {2, 2, 0, 2});
  const DeconvolvedMoment d2 = deconvolve_moments(batch, cfg, {1, 2, 1, 2});
  const DeconvolvedMoment d3 = deconvolve_moments(batch, cfg, {0, 2, 2, 2});
  const double mc = d1.value - 2.0 * d2.value + d3.value;
  const double se = d1.stderr + 2.0 * d2.stderr + d3.stderr;
  REQUIRE(std::abs(mc - engine) <= 3.0 * se + 1.0 * cfg.g);
}

TEST_CASE("superconserving energy measurements keep the jump at zero") {
  const ModelBundle b = qubit();
  const State th = thermal_state(b.hamiltonian, 1.0);
  const double tau = 0.9;
  MeasurementConfig cfg;
  cfg.g = 0.05;
  cfg.n_trajectories = 200000;
  cfg.seed = 23;
  const auto before = superconserving_sequence(
      th, {SO{-1e-6, b.observable("H"), 1}, SO{0.0, b.observable("X"), 1},
           SO{tau, b.observable("X"), 1}},
      b.hamiltonian, b.observable("H"), cfg);
  const auto after = superconserving_sequence(
      th, {SO{0.0, b.observable("X"), 1}, SO{1e-6, b.observable("H"), 1},
           SO{tau, b.observable("X"), 1}},
      b.hamiltonian, b.observable("H"), cfg);
  const double est = before.batch.moment({1, 1, 1}) - after.batch.moment({1, 1, 1});
  const double se = std::sqrt(std::pow(before.batch.moment_stderr({1, 1, 1}), 2) +
                              std::pow(after.batch.moment_stderr({1, 1, 1}), 2));
  REQUIRE(std::abs(est) <= 3.0 * se);
  REQUIRE(before.discarded_coherence < 1e-14);  // thermal state is block-diagonal
}

TEST_CASE("superconserving mode with commuting observables matches plain mode exactly") {
  const ModelBundle b = qubit();
  const State th = thermal_state(b.hamiltonian, 1.0);
  MeasurementConfig cfg;
  cfg.g = 0.1;
  cfg.n_trajectories = 2000;
  cfg.seed = 29;
  SequenceOptions opts;
  opts.store_outcomes = true;
  std::vector<SO> schedule{SO{0.0, b.observable("H"), 1}, SO{0.7, b.observable("H"), 1}};
  const TrajectoryBatch plain = run_sequence(th, schedule, b.hamiltonian, cfg, opts);
  const auto super =
      superconserving_sequence(th, schedule, b.hamiltonian, b.observable("H"), cfg, opts);
  REQUIRE((plain.outcomes - super.batch.outcomes).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("superconserving dephasing discards input coherence and reports it") {
  const ModelBundle b = qubit();
  Vector plus(2);
  plus << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
  const State st = State::pure(plus);
  MeasurementConfig cfg;
  cfg.g = 0.1;
  cfg.n_trajectories = 1000;
  cfg.seed = 31;
  const auto run = superconserving_sequence(st, {SO{0.0, b.observable("X"), 1}},
                                            b.hamiltonian, b.observable("H"), cfg);
  REQUIRE(run.discarded_coherence == Approx(0.5).margin(1e-12));
}

TEST_CASE("dephased observable commutes with the superconserved quantity") {
  const ModelBundle b = qubit();
  const auto projs = eigenprojectors(b.observable("H"));
  Matrix dephased = Matrix::Zero(2, 2);
  for (const auto& p : projs) {
    dephased += p.entries() * b.observable("X").entries() * p.entries();
  }
  const Matrix comm = b.observable("H").entries() * dephased -
                      dephased * b.observable("H").entries();
  REQUIRE(max_abs(comm) < 1e-14);
}

TEST_CASE("moments are bit-identical across thread counts for a fixed seed") {
  const ModelBundle b = qubit();
  const State th = thermal_state(b.hamiltonian, 1.0);
  MeasurementConfig cfg;
  cfg.g = 0.05;
  cfg.n_trajectories = 64000;
  cfg.seed = 37;
  std::vector<SO> schedule{SO{0.0, b.observable("H"), 1}, SO{0.9, b.observable("X"), 1}};
  setenv("WEAKCORR_THREADS", "1", 1);
  const TrajectoryBatch one = run_sequence(th, schedule, b.hamiltonian, cfg);
  setenv("WEAKCORR_THREADS", "2", 1);
  const TrajectoryBatch two = run_sequence(th, schedule, b.hamiltonian, cfg);
  unsetenv("WEAKCORR_THREADS");
  for (size_t m = 0; m < one.moment_mean.size(); ++m) {
    REQUIRE(one.moment_mean[m] == two.moment_mean[m]);
    REQUIRE(one.moment_se[m] == two.moment_se[m]);
  }
}

TEST_CASE("per-step posteriors keep unit trace") {
  const ModelBundle b = qubit();
  const State th = thermal_state(b.hamiltonian, 1.0);
  MeasurementConfig cfg;
  cfg.g = 0.3;
  RngStream rng(41, 0);
  State st = th;
  for (int step = 0; step < 10; ++step) {
    const WeakOutcome out = apply_weak_measurement(st, b.observable("X"), cfg, rng);
    REQUIRE(std::abs(out.posterior.rho().trace().real() - 1.0) < 1e-12);
    st = out.posterior;
  }
}

TEST_CASE("kraus family validation") {
  KrausFamily family;
  family.mode = KrausMode::Superconserving;
  REQUIRE_THROWS_AS(family.validate(2), InvalidInputError);
  Matrix p0 = Matrix::Zero(2, 2);
  p0(0, 0) = 1.0;
  family.projectors = {Operator::hermitian(p0)};
  REQUIRE_THROWS_AS(family.validate(2), InvalidInputError);  // incomplete
  Matrix p1 = Matrix::Zero(2, 2);
  p1(1, 1) = 1.0;
  family.projectors.push_back(Operator::hermitian(p1));
  REQUIRE_NOTHROW(family.validate(2));
}
