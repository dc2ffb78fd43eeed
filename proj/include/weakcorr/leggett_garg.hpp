#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "weakcorr/correlator.hpp"
#include "weakcorr/measurement.hpp"
#include "weakcorr/models.hpp"

namespace weakcorr {

/// Four-observable Leggett-Garg scenario: the (approximately) conserved q is
/// read at t1 and t1p, the positions x and y at t2 and t3, with
/// t1 < t2 < t1p < t3.
struct LGScenario {
  ModelBundle model;
  Operator q = Operator::identity(1);   // e.g. Lz, or Lz + lambda X
  Operator x = Operator::identity(1);
  Operator y = Operator::identity(1);
  double t1 = 0.0, t2 = 0.0, t1p = 0.0, t3 = 0.0;
  State state = State(Matrix::Identity(1, 1));

  void validate() const {
    if (!(t1 < t2 && t2 < t1p && t1p < t3)) {
      throw InvalidInputError("LGScenario: need strict ordering t1 < t2 < t1' < t3");
    }
  }
};

/// Both Cauchy-Bunyakovsky-Schwarz bounds on the fourth-order quasiprobability
/// moments, their right-hand side, and the violation margins
/// margin_i = rhs - lhs_i (> 0 means the inequality is violated).
struct LGReport {
  double lhs1 = 0.0;  // <(q-q')^2> <x^2 y^2>
  double lhs2 = 0.0;  // <(q-q')^2 y^2> <x^2>
  double rhs = 0.0;   // <(q-q') x y>^2
  bool violated1 = false;
  bool violated2 = false;
  double margin1 = 0.0;
  double margin2 = 0.0;
  // individual moments for reporting
  double qq_spread = 0.0;       // <(q-q')^2>
  double x2y2 = 0.0;            // <x^2 y^2>
  double qq_spread_y2 = 0.0;    // <(q-q')^2 y^2>
  double x2 = 0.0;              // <x^2>
  double qxy_diff = 0.0;        // <(q-q') x y>
};

namespace detail {

inline LGReport assemble_report(double q2, double qqp, double qp2, double x2y2, double q2y2,
                                double qqpy2, double qp2y2, double x2, double qxy,
                                double qpxy, double tol) {
  LGReport rep;
  rep.qq_spread = q2 - 2.0 * qqp + qp2;
  rep.x2y2 = x2y2;
  rep.qq_spread_y2 = q2y2 - 2.0 * qqpy2 + qp2y2;
  rep.x2 = x2;
  rep.qxy_diff = qxy - qpxy;
  rep.lhs1 = rep.qq_spread * rep.x2y2;
  rep.lhs2 = rep.qq_spread_y2 * rep.x2;
  rep.rhs = rep.qxy_diff * rep.qxy_diff;
  rep.margin1 = rep.rhs - rep.lhs1;
  rep.margin2 = rep.rhs - rep.lhs2;
  rep.violated1 = rep.lhs1 < rep.rhs - tol;
  rep.violated2 = rep.lhs2 < rep.rhs - tol;
  return rep;
}

}  // namespace detail

/// Exact-engine evaluation of the two CBS inequalities. (q - q')^n moments are
/// expanded termwise; q and q' always occupy their own time slots t1 and t1'.
inline LGReport evaluate_lg(const LGScenario& sc) {
  sc.validate();
  const Operator& h = sc.model.hamiltonian;
  auto mom = [&](std::vector<ScheduledObservable> slots) {
    CorrelatorRequest req{std::move(slots), sc.state, h};
    return weak_moment(req);
  };
  using SO = ScheduledObservable;
  const double q2 = mom({SO{sc.t1, sc.q, 2}});
  const double qqp = mom({SO{sc.t1, sc.q, 1}, SO{sc.t1p, sc.q, 1}});
  const double qp2 = mom({SO{sc.t1p, sc.q, 2}});
  const double x2y2 = mom({SO{sc.t2, sc.x, 2}, SO{sc.t3, sc.y, 2}});
  const double q2y2 = mom({SO{sc.t1, sc.q, 2}, SO{sc.t3, sc.y, 2}});
  const double qqpy2 = mom({SO{sc.t1, sc.q, 1}, SO{sc.t1p, sc.q, 1}, SO{sc.t3, sc.y, 2}});
  const double qp2y2 = mom({SO{sc.t1p, sc.q, 2}, SO{sc.t3, sc.y, 2}});
  const double x2 = mom({SO{sc.t2, sc.x, 2}});
  const double qxy = mom({SO{sc.t1, sc.q, 1}, SO{sc.t2, sc.x, 1}, SO{sc.t3, sc.y, 1}});
  const double qpxy = mom({SO{sc.t2, sc.x, 1}, SO{sc.t1p, sc.q, 1}, SO{sc.t3, sc.y, 1}});
  return detail::assemble_report(q2, qqp, qp2, x2y2, q2y2, qqpy2, qp2y2, x2, qxy, qpxy,
                                 propagated_tol);
}

/// LGReport with batch-means confidence intervals.
struct LGMonteCarloReport {
  LGReport central;
  double rhs_se = 0.0;
  double lhs1_se = 0.0;
  double lhs2_se = 0.0;
  double qxy_diff_se = 0.0;
  double qq_spread_se = 0.0;
  long long n_trajectories = 0;
};

/// Monte Carlo estimate of the same report from deconvolved weak-measurement
/// trajectories over the four-slot schedule (q, x, q', y).
inline LGMonteCarloReport lg_monte_carlo(const LGScenario& sc, const MeasurementConfig& cfg,
                                         const SequenceOptions& user_opts = {}) {
  sc.validate();
  if (!cfg.deconvolve) throw InvalidInputError("lg_monte_carlo: cfg.deconvolve must be set");
  using SO = ScheduledObservable;
  std::vector<SO> schedule{SO{sc.t1, sc.q, 1}, SO{sc.t2, sc.x, 1}, SO{sc.t1p, sc.q, 1},
                           SO{sc.t3, sc.y, 1}};
  SequenceOptions opts = user_opts;
  opts.max_powers = {2, 2, 2, 2};
  TrajectoryBatch batch = run_sequence(sc.state, schedule, sc.model.hamiltonian, cfg, opts);

  auto dec = [&](std::vector<int> p) { return deconvolve_moments(batch, cfg, p); };
  const auto q2 = dec({2, 0, 0, 0});
  const auto qqp = dec({1, 0, 1, 0});
  const auto qp2 = dec({0, 0, 2, 0});
  const auto x2y2 = dec({0, 2, 0, 2});
  const auto q2y2 = dec({2, 0, 0, 2});
  const auto qqpy2 = dec({1, 0, 1, 2});
  const auto qp2y2 = dec({0, 0, 2, 2});
  const auto x2 = dec({0, 2, 0, 0});
  const auto qxy = dec({1, 1, 0, 1});
  const auto qpxy = dec({0, 1, 1, 1});

  LGMonteCarloReport out;
  out.n_trajectories = cfg.n_trajectories;
  // tolerance for the violation verdict: 3 standard errors on the difference
  out.qxy_diff_se = std::sqrt(qxy.stderr * qxy.stderr + qpxy.stderr * qpxy.stderr);
  out.qq_spread_se = std::sqrt(q2.stderr * q2.stderr + 4.0 * qqp.stderr * qqp.stderr +
                               qp2.stderr * qp2.stderr);
  const double qq_spread = q2.value - 2.0 * qqp.value + qp2.value;
  const double qq_spread_y2 = q2y2.value - 2.0 * qqpy2.value + qp2y2.value;
  const double qxy_diff = qxy.value - qpxy.value;
  out.rhs_se = 2.0 * std::abs(qxy_diff) * out.qxy_diff_se;
  out.lhs1_se = std::abs(qq_spread) * x2y2.stderr + std::abs(x2y2.value) * out.qq_spread_se;
  const double qq_spread_y2_se =
      std::sqrt(q2y2.stderr * q2y2.stderr + 4.0 * qqpy2.stderr * qqpy2.stderr +
                qp2y2.stderr * qp2y2.stderr);
  out.lhs2_se = std::abs(qq_spread_y2) * x2.stderr + std::abs(x2.value) * qq_spread_y2_se;
  const double tol = 3.0 * (out.rhs_se + out.lhs1_se);
  out.central = detail::assemble_report(q2.value, qqp.value, qp2.value, x2y2.value,
                                        q2y2.value, qqpy2.value, qp2y2.value, x2.value,
                                        qxy.value, qpxy.value, tol);
  return out;
}

/// Standard scenario builder: q = Lz (optionally skewed by lambda X for an
/// imprecisely measured magnetometer), x = X, y = Y.
inline LGScenario make_lz_scenario(const ModelSpec& model_spec, const State& state, double t1,
                                   double t2, double t1p, double t3,
                                   double q_skew_lambda = 0.0) {
  ModelBundle b = build(model_spec);
  LGScenario sc{b,
                q_skew_lambda == 0.0
                    ? b.observable("Lz")
                    : Operator::hermitian(b.observable("Lz").entries() +
                                          q_skew_lambda * b.observable("X").entries()),
                b.observable("X"),
                b.observable("Y"),
                t1,
                t2,
                t1p,
                t3,
                state};
  return sc;
}

struct DetuningSweepPoint {
  double epsilon = 0.0;
  LGReport report;
};

struct DetuningThreshold {
  std::vector<DetuningSweepPoint> sweep;
  double epsilon_star = 0.0;  // violation (inequality 1) disappears above this
  bool bracketed = false;
};

/// Sweep the detuning of the planar trap and locate, by bisection on the
/// margin of the first inequality, the detuning at which the LG violation
/// disappears. epsilon_star is an output of the exact engine, not an assumed
/// number.
inline DetuningThreshold lg_detuning_threshold(double omega, int truncation, double t1,
                                               double t2, double t1p, double t3,
                                               const std::vector<double>& eps_grid,
                                               double bisect_tol = 1e-4) {
  DetuningThreshold out;
  auto margin_at = [&](double eps) {
    ModelSpec ms;
    ms.kind = eps == 0.0 ? ModelKind::PlanarTrap : ModelKind::DetunedPlanarTrap;
    ms.omega = omega;
    ms.truncation = truncation;
    ms.detuning_epsilon = eps;
    ModelBundle b = build(ms);
    LGScenario sc = make_lz_scenario(ms, ground_state(b), t1, t2, t1p, t3);
    return evaluate_lg(sc);
  };
  double lo = -1.0, hi = -1.0;
  for (double eps : eps_grid) {
    LGReport rep = margin_at(eps);
    out.sweep.push_back({eps, rep});
    if (rep.margin1 > 0.0) {
      lo = eps;
    } else if (hi < 0.0) {
      hi = eps;
    }
  }
  if (lo < 0.0 || hi < 0.0) return out;  // not bracketed on the grid
  out.bracketed = true;
  while (hi - lo > bisect_tol) {
    const double mid = 0.5 * (lo + hi);
    if (margin_at(mid).margin1 > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  out.epsilon_star = 0.5 * (lo + hi);
  return out;
}

}  // namespace weakcorr
