#pragma once

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "weakcorr/models.hpp"
#include "weakcorr/operator_algebra.hpp"

namespace weakcorr {

/// One weakly measured slot: observable at a time, with the power applied to
/// the recorded outcome (and hence to the Heisenberg operator inside the
/// nesting).
struct ScheduledObservable {
  double time = 0.0;
  Operator observable = Operator::identity(1);
  int exponent = 1;
};

struct CorrelatorRequest {
  std::vector<ScheduledObservable> schedule;
  State state;
  Operator hamiltonian;
};

namespace detail {

inline void validate_schedule_entry(const ScheduledObservable& s) {
  if (s.exponent < 1) throw InvalidInputError("ScheduledObservable: exponent must be >= 1");
  if (!s.observable.is_hermitian()) {
    throw InvalidInputError("ScheduledObservable: observable must be Hermitian");
  }
}

inline bool commute_within(const Matrix& a, const Matrix& b, double tol) {
  const double scale =
      std::max(1.0, max_abs(a)) * std::max(1.0, max_abs(b));
  return max_abs(a * b - b * a) <= tol * scale;
}

using SparseMat = Eigen::SparseMatrix<cplx>;

inline long long nnz_count(const Matrix& m, double eps) {
  long long n = 0;
  for (int j = 0; j < m.cols(); ++j) {
    for (int i = 0; i < m.rows(); ++i) {
      if (std::abs(m(i, j)) > eps) ++n;
    }
  }
  return n;
}

/// Nested-anticommutator trace over very sparse factors (the benchmark
/// observables couple only adjacent Fock levels, so the nest stays sparse).
/// Returns false when fill-in makes the dense path preferable.
inline bool sparse_weak_moment(const std::vector<Matrix>& ops, const Matrix& rho,
                               bool rho_diagonal, cplx* out) {
  const int dim = static_cast<int>(rho.rows());
  const double eps = 1e-300;  // structural zeros only
  std::vector<SparseMat> sops;
  sops.reserve(ops.size());
  for (const auto& m : ops) {
    if (nnz_count(m, 0.0) > 8LL * dim) return false;
    sops.push_back(m.sparseView());
  }
  SparseMat nest = sops.back();
  for (size_t k = ops.size() - 1; k >= 2; --k) {
    SparseMat prod = (sops[k - 1] * nest).pruned(1.0, eps);
    SparseMat nest_next = prod + SparseMat(prod.adjoint());
    nest = std::move(nest_next);
    if (nest.nonZeros() > 64LL * dim) return false;
  }
  cplx tr = 0.0;
  if (ops.size() == 1) {
    for (int outer = 0; outer < nest.outerSize(); ++outer) {
      for (SparseMat::InnerIterator it(nest, outer); it; ++it) {
        tr += it.value() * rho(it.col(), it.row());
      }
    }
    *out = tr;
    return true;
  }
  const Matrix& o1 = ops.front();
  if (rho_diagonal) {
    for (int outer = 0; outer < nest.outerSize(); ++outer) {
      for (SparseMat::InnerIterator it(nest, outer); it; ++it) {
        const int k = static_cast<int>(it.row());
        const int l = static_cast<int>(it.col());
        // Tr[O1 nest rho] + Tr[O1 rho nest]
        tr += it.value() * (o1(l, k) * rho(l, l) + rho(k, k) * o1(l, k));
      }
    }
  } else {
    for (int outer = 0; outer < nest.outerSize(); ++outer) {
      for (SparseMat::InnerIterator it(nest, outer); it; ++it) {
        const int k = static_cast<int>(it.row());
        const int l = static_cast<int>(it.col());
        cplx term1 = 0.0, term2 = 0.0;
        for (int i = 0; i < dim; ++i) {
          term1 += rho(l, i) * o1(i, k);  // Tr[O1 M rho]: (rho O1)(l, k)
          term2 += o1(l, i) * rho(i, k);  // Tr[M O1 rho]: (O1 rho)(l, k)
        }
        tr += it.value() * (term1 + term2);
      }
    }
  }
  *out = tr;
  return true;
}

}  // namespace detail

/// Quasiprobability moment of a time-ordered sequence of weak measurements:
/// with O_1 the earliest evolved (and powered) observable,
///   Tr[{O_1, {O_2, ... {O_{n-1}, O_n} ...}} rho] / 2^{n-1}.
/// A single slot reduces to <O(t)>, two slots to the symmetrized two-time
/// correlator. Ties in time are allowed only between commuting observables.
inline double weak_moment(const CorrelatorRequest& req) {
  const auto& schedule = req.schedule;
  if (schedule.empty() || schedule.size() > 6) {
    throw InvalidInputError("weak_moment: schedule length must be 1..6");
  }
  for (const auto& s : schedule) {
    detail::validate_schedule_entry(s);
    if (s.observable.dim() != req.state.dim() ||
        s.observable.dim() != req.hamiltonian.dim()) {
      throw InvalidInputError("weak_moment: dimension mismatch in request");
    }
  }
  std::vector<int> order(schedule.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return schedule[a].time < schedule[b].time;
  });

  // Evolve each slot to its time and apply the outcome power.
  std::vector<Matrix> ops;
  ops.reserve(schedule.size());
  for (int idx : order) {
    const auto& s = schedule[idx];
    Operator evolved = evolve(s.observable, req.hamiltonian, s.time);
    if (s.exponent > 1) evolved = operator_power(evolved, s.exponent);
    ops.push_back(evolved.entries());
  }
  // Ties are only meaningful when the tied observables commute; otherwise the
  // time order of the nesting is ambiguous and we refuse to guess.
  for (size_t i = 0; i + 1 < order.size(); ++i) {
    if (schedule[order[i]].time == schedule[order[i + 1]].time) {
      if (!detail::commute_within(ops[i], ops[i + 1], 1e-12)) {
        throw InvalidInputError(
            "weak_moment: order ambiguous (tied times for non-commuting observables)");
      }
    }
  }

  const double norm_div = std::pow(2.0, static_cast<double>(ops.size() - 1));
  // Ultra-sparse factors (ladder-coupling observables on large truncations)
  // keep the whole nest sparse; use the cheap path when it applies.
  if (req.state.dim() >= 256) {
    cplx tr_sparse;
    if (detail::sparse_weak_moment(ops, req.state.rho(),
                                   detail::is_diagonal(req.state.rho()), &tr_sparse)) {
      const double value = tr_sparse.real() / norm_div;
      const double residue = std::abs(tr_sparse.imag()) / norm_div;
      if (residue > propagated_tol * std::max(1.0, std::abs(value))) {
        throw NumericalContractError("weak_moment: imaginary residue " +
                                     std::to_string(residue));
      }
      return value;
    }
  }
  // Build the nest inside out. Every level is Hermitian, so one product per
  // level suffices: {O, R} = O R + (O R)^dag.
  Matrix nest = ops.back();
  for (size_t k = ops.size() - 1; k >= 2; --k) {
    Matrix prod = ops[k - 1] * nest;
    nest = prod + prod.adjoint().eval();
  }
  // Final level folded into the trace: Tr[{O_1, R} rho] = Tr[O_1 R rho] +
  // Tr[O_1 rho R]; with a diagonal state both terms are elementwise sums.
  cplx tr;
  const Matrix& rho = req.state.rho();
  if (ops.size() == 1) {
    tr = (nest * rho).trace();
  } else {
    const Matrix& o1 = ops.front();
    Matrix right, left;
    if (detail::is_diagonal(rho)) {
      right = nest * rho.diagonal().asDiagonal();
      left = rho.diagonal().asDiagonal() * nest;
    } else {
      right = nest * rho;
      left = rho * nest;
    }
    tr = (o1.transpose().cwiseProduct(right) + o1.transpose().cwiseProduct(left)).sum();
  }
  const double value = tr.real() / norm_div;
  const double residue = std::abs(tr.imag()) / norm_div;
  // The nested anticommutator of Hermitian factors is Hermitian; any imaginary
  // part is rounding noise on the scale of the nested operator itself.
  if (residue > propagated_tol * std::max(1.0, max_abs(nest) / norm_div)) {
    throw NumericalContractError("weak_moment: imaginary residue " + std::to_string(residue));
  }
  return value;
}

/// Report for the conserved-quantity jump around one measurement time.
/// jump_value = <[[Q, A(t2)], B(t3)]>/4, and equals before - after where
/// before/after schedule Q just before/after A.
struct JumpReport {
  double jump_value = 0.0;
  double before_value = 0.0;
  double after_value = 0.0;
  double commutator_norm = 0.0;
};

inline constexpr double jump_time_offset = 1e-6;  // 0-/0+ scheduling offset

/// Conserved-quantity jump across the measurement of a at time t2, probed by
/// b at t3. Requires [h, q] = 0; use weak_moment directly for non-conserved q.
inline JumpReport jump(const Operator& q, const ScheduledObservable& a,
                       const ScheduledObservable& b, const State& state,
                       const Operator& h) {
  if (!q.is_hermitian()) throw InvalidInputError("jump: q must be Hermitian");
  const double scale = std::max(1.0, max_abs(q.entries())) *
                       std::max(1.0, max_abs(h.entries()));
  if (max_abs((h.entries() * q.entries() - q.entries() * h.entries())) > 1e-10 * scale) {
    throw InvalidInputError("jump: q is not conserved ([h,q] != 0); use weak_moment directly");
  }
  // a.time == b.time is admissible only when the evolved observables commute;
  // weak_moment enforces that tie policy on the before/after routes.
  if (a.time > b.time) throw InvalidInputError("jump: requires a.time <= b.time");

  Operator a_t = evolve(a.observable, h, a.time);
  if (a.exponent > 1) a_t = operator_power(a_t, a.exponent);
  Operator b_t = evolve(b.observable, h, b.time);
  if (b.exponent > 1) b_t = operator_power(b_t, b.exponent);
  const Operator inner = commutator(q, a_t);
  const Operator outer = commutator(inner, b_t);

  JumpReport rep;
  rep.commutator_norm = spectral_norm(outer);
  const cplx tr = (outer.entries() * state.rho()).trace();
  rep.jump_value = tr.real() / 4.0;

  auto moment_with_q_at = [&](double tq) {
    CorrelatorRequest req{{ScheduledObservable{tq, q, 1}, a, b}, state, h};
    return weak_moment(req);
  };
  rep.before_value = moment_with_q_at(a.time - jump_time_offset);
  rep.after_value = moment_with_q_at(a.time + jump_time_offset);
  // delta-independence: the plateaus are flat for conserved q
  const double before_fine = moment_with_q_at(a.time - jump_time_offset / 10.0);
  const double after_fine = moment_with_q_at(a.time + jump_time_offset / 10.0);
  const double tol = propagated_tol * std::max(1.0, std::abs(rep.jump_value));
  if (std::abs(before_fine - rep.before_value) > tol ||
      std::abs(after_fine - rep.after_value) > tol) {
    throw NumericalContractError("jump: before/after values not delta-independent");
  }
  if (std::abs(rep.jump_value - (rep.before_value - rep.after_value)) >
      propagated_tol * std::max(1.0, std::abs(rep.jump_value))) {
    throw NumericalContractError(
        "jump: double-commutator route disagrees with before-after route");
  }
  return rep;
}

/// Max deviation of <q(t1) a(t2)> over t1 in t_grid (both sides of t2) from
/// its mean. Contract: <= 1e-10 for conserved q.
inline double second_order_time_invariance(const Operator& q, const ScheduledObservable& a,
                                           const State& state, const Operator& h,
                                           const std::vector<double>& t_grid) {
  if (t_grid.empty()) throw InvalidInputError("second_order_time_invariance: empty grid");
  std::vector<double> vals;
  vals.reserve(t_grid.size());
  for (double t1 : t_grid) {
    if (t1 == a.time) continue;  // tie with a non-commuting observable would throw
    CorrelatorRequest req{{ScheduledObservable{t1, q, 1}, a}, state, h};
    vals.push_back(weak_moment(req));
  }
  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= static_cast<double>(vals.size());
  double dev = 0.0;
  for (double v : vals) dev = std::max(dev, std::abs(v - mean));
  return dev;
}

struct WeakWayReport {
  bool holds = true;
  int worst_a = -1;
  int worst_b = -1;
  double worst_norm = 0.0;
};

/// ||[[Q, A], B]|| for one ordered pair, optionally restricted to a
/// low-occupation block.
inline double weak_way_pair_norm(const Operator& q, const Operator& a, const Operator& b,
                                 const std::optional<Operator>& block_projector = {}) {
  Operator m = commutator(commutator(q, a), b);
  if (block_projector) {
    m = Operator::general(block_projector->entries() * m.entries() *
                          block_projector->entries());
  }
  return spectral_norm(m);
}

/// Evaluate ||[[Q, A], B]|| (spectral norm) over all ordered pairs from the
/// list; holds iff all norms <= 1e-10. An optional projector restricts the
/// norm to a low-occupation block to suppress Fock-cropping artifacts at the
/// truncation edge.
inline WeakWayReport weak_way_check(const Operator& q, const std::vector<Operator>& observables,
                                    const std::optional<Operator>& block_projector = {}) {
  WeakWayReport rep;
  for (size_t i = 0; i < observables.size(); ++i) {
    for (size_t j = 0; j < observables.size(); ++j) {
      Operator m = commutator(commutator(q, observables[i]), observables[j]);
      if (block_projector) {
        m = Operator::general(block_projector->entries() * m.entries() *
                              block_projector->entries());
      }
      const double nrm = spectral_norm(m);
      if (nrm > rep.worst_norm) {
        rep.worst_norm = nrm;
        rep.worst_a = static_cast<int>(i);
        rep.worst_b = static_cast<int>(j);
      }
    }
  }
  rep.holds = rep.worst_norm <= propagated_tol;
  return rep;
}

/// Thermal planar-trap correlator <l_z x(t2) y(t3)> with the angular-momentum
/// slot scheduled before both position measurements. Rejects truncations whose
/// thermal tail is not negligible.
inline double finite_temperature_lz_correlator(double kT, double t2, double t3,
                                               int truncation) {
  if (kT <= 0.0) throw InvalidInputError("finite_temperature_lz_correlator: kT must be > 0");
  ModelSpec spec;
  spec.kind = ModelKind::PlanarTrap;
  spec.truncation = truncation;
  ModelBundle b = build(spec);
  State rho = thermal_state(b.hamiltonian, kT);
  const double tail = population_above(b, rho, truncation - 4);
  if (tail > 1e-5) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3e", tail);
    throw InvalidInputError(
        "finite_temperature_lz_correlator: truncation " + std::to_string(truncation) +
        " insufficient for kT = " + std::to_string(kT) + " (tail mass above total level " +
        std::to_string(truncation - 4) + " is " + buf + ")");
  }
  const double t1 = std::min(t2, t3) - 1.0;
  CorrelatorRequest req{{ScheduledObservable{t1, b.observable("Lz"), 1},
                         ScheduledObservable{t2, b.observable("X"), 1},
                         ScheduledObservable{t3, b.observable("Y"), 1}},
                        rho, b.hamiltonian};
  return weak_moment(req);
}

}  // namespace weakcorr
