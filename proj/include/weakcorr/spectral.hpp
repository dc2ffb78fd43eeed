#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "weakcorr/correlator.hpp"
#include "weakcorr/models.hpp"

namespace weakcorr {

/// Angular-frequency triple on the conservation shell gamma = -(alpha+beta).
struct FreqTriple {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  static FreqTriple on_shell(double alpha, double beta) {
    return FreqTriple{alpha, beta, -(alpha + beta)};
  }
};

/// Coefficient of delta(gamma + alpha + beta) in the frequency-domain
/// angular-momentum correlator.
struct FreqResult {
  cplx coefficient{0.0, 0.0};
  double regularization_eta = 0.0;
};

/// Zero-temperature planar-trap coefficient
///   i pi w (beta - alpha) / [2 (alpha^2 - w^2)(beta^2 - w^2)]
/// (hbar = 1), valid off the poles alpha, beta in {0, +-w} and off the
/// zero-frequency shell gamma = 0.
inline cplx lz_freq_analytic(double alpha, double beta, double omega = 1.0) {
  const double tol = 1e-9 * omega;
  auto on_pole = [&](double f) {
    return std::abs(f) < tol || std::abs(std::abs(f) - omega) < tol;
  };
  if (on_pole(alpha) || on_pole(beta)) {
    throw InvalidInputError("lz_freq_analytic: on resonance (alpha/beta at a pole)");
  }
  if (std::abs(alpha + beta) < tol) {
    throw InvalidInputError("lz_freq_analytic: zero-frequency shell (gamma = 0) excluded");
  }
  const double denom = 2.0 * (alpha * alpha - omega * omega) * (beta * beta - omega * omega);
  return cplx(0.0, pi * omega * (beta - alpha) / denom);
}

namespace detail {

// 10-point Gauss-Legendre rule on [-1, 1]
inline constexpr std::array<double, 10> gl_nodes = {
    -0.9739065285171717, -0.8650633666889845, -0.6794095682990244,
    -0.4333953941292472, -0.1488743389816312, 0.1488743389816312,
    0.4333953941292472,  0.6794095682990244,  0.8650633666889845,
    0.9739065285171717};
inline constexpr std::array<double, 10> gl_weights = {
    0.0666713443086881, 0.1494513491505806, 0.2190863625159820,
    0.2692667193099963, 0.2955242247147529, 0.2955242247147529,
    0.2692667193099963, 0.2190863625159820, 0.1494513491505806,
    0.0666713443086881};

/// Half-line integral of exp((i zeta - eta) u) (1 + eta u) f(u) for a
/// P-periodic f, via one-period quadrature plus an exact geometric
/// resummation of the period tail.
struct PeriodicHalfLine {
  double period;
  int panels;
  std::vector<double> nodes;    // quadrature nodes in [0, P)
  std::vector<double> weights;  // quadrature weights

  explicit PeriodicHalfLine(double p, int n_panels) : period(p), panels(n_panels) {
    const double h = period / panels;
    for (int k = 0; k < panels; ++k) {
      for (int j = 0; j < 10; ++j) {
        nodes.push_back(h * (k + 0.5 * (1.0 + gl_nodes[j])));
        weights.push_back(0.5 * h * gl_weights[j]);
      }
    }
  }

  cplx integrate(const std::vector<cplx>& f_at_nodes, double zeta, double eta) const {
    const cplx iz(0.0, zeta);
    cplx a0 = 0.0;  // int_0^P e^{(i zeta - eta) v} f(v) dv
    cplx a1 = 0.0;  // int_0^P e^{(i zeta - eta) v} eta v f(v) dv
    for (size_t i = 0; i < nodes.size(); ++i) {
      const double v = nodes[i];
      const cplx e = std::exp((iz - eta) * v) * weights[i] * f_at_nodes[i];
      a0 += e;
      a1 += e * (eta * v);
    }
    const cplx r = std::exp((iz - eta) * period);
    const cplx one_minus_r = 1.0 - r;
    // sum_k r^k [(1 + eta k P) a0 + a1]
    return (a0 + a1) / one_minus_r + a0 * (eta * period) * r / (one_minus_r * one_minus_r);
  }
};

}  // namespace detail

/// Memoized plateau correlator S(u) = <l_z x(t2) y(t3)>, u = t2 - t3, with
/// the angular-momentum slot after both position measurements. Stationary
/// states only; S is periodic with the trap period.
class LzPlateauTable {
 public:
  LzPlateauTable(const ModelBundle& model, const State& state)
      : model_(&model), state_(&state) {
    const Matrix& h = model.hamiltonian.entries();
    const Matrix& r = state.rho();
    if (max_abs(h * r - r * h) > 1e-10 * std::max(1.0, max_abs(h))) {
      throw InvalidInputError("LzPlateauTable: state must be stationary ([H,rho] = 0)");
    }
  }

  double operator()(double u) const {
    auto it = cache_.find(u);
    if (it != cache_.end()) return it->second;
    const double t2 = u, t3 = 0.0;
    const double t1 = std::max(t2, t3) + 1.0;
    CorrelatorRequest req{{ScheduledObservable{t1, model_->observable("Lz"), 1},
                           ScheduledObservable{t2, model_->observable("X"), 1},
                           ScheduledObservable{t3, model_->observable("Y"), 1}},
                          *state_, model_->hamiltonian};
    const double v = weak_moment(req);
    cache_.emplace(u, v);
    return v;
  }

 private:
  const ModelBundle* model_;
  const State* state_;
  mutable std::map<double, double> cache_;
};

/// Numeric frequency-domain coefficient at finite regularization eta:
/// the double time integral of exp(i alpha t2 + i beta t3 - eta(|t2|+|t3|))
/// times the engine correlator, with the t1 step structure integrated
/// analytically, reduced to half-line integrals of the stationary plateau
/// correlator S(u), u = t2 - t3. Converges to lz_freq_analytic linearly in
/// eta.
inline FreqResult lz_freq_numeric(double alpha, double beta, const ModelBundle& model,
                                  const State& state, double eta = 1e-3,
                                  double quad_tol = 1e-10,
                                  const LzPlateauTable* table = nullptr) {
  if (eta <= 0.0) throw InvalidInputError("lz_freq_numeric: eta must be positive");
  const double omega = model.spec.omega;
  const double gamma = -(alpha + beta);
  if (std::abs(gamma) < 1e-9 * omega) {
    throw InvalidInputError("lz_freq_numeric: zero-frequency shell excluded");
  }
  std::optional<LzPlateauTable> local_table;
  if (!table) local_table.emplace(model, state);
  const LzPlateauTable& plateau = table ? *table : *local_table;
  const double period = 2.0 * pi / omega;

  // refine the one-period rule until the assembled coefficient is stable
  std::vector<std::pair<int, cplx>> trail;
  for (int panels = 8; panels <= 256; panels *= 2) {
    detail::PeriodicHalfLine rule(period, panels);
    std::vector<cplx> s_pos(rule.nodes.size()), s_neg(rule.nodes.size());
    for (size_t i = 0; i < rule.nodes.size(); ++i) {
      s_pos[i] = plateau(rule.nodes[i]);
      // S(-v) by periodicity = S(P - v)
      s_neg[i] = plateau(period - rule.nodes[i]);
    }
    const cplx j_pos = rule.integrate(s_pos, alpha, eta);
    const cplx j_neg = rule.integrate(s_neg, beta, eta);
    const cplx c_2pi = cplx(0.0, 1.0) / gamma * (j_pos + j_neg);
    const cplx coeff = 2.0 * pi * c_2pi;  // coefficient of delta(gamma+alpha+beta)
    trail.emplace_back(panels, coeff);
    if (trail.size() >= 2) {
      const cplx prev = trail[trail.size() - 2].second;
      if (std::abs(coeff - prev) <= quad_tol * std::max(1.0, std::abs(coeff))) {
        return FreqResult{coeff, eta};
      }
    }
  }
  std::string msg = "lz_freq_numeric: grid non-convergence; refinement trail:";
  for (const auto& [p, v] : trail) {
    msg += " [" + std::to_string(p) + " panels -> " + std::to_string(v.real()) +
           (v.imag() >= 0 ? "+" : "") + std::to_string(v.imag()) + "i]";
  }
  throw NumericalContractError(msg);
}

struct FreqExtrapolation {
  cplx value{0.0, 0.0};      // eta -> 0 limit
  double slope = 0.0;        // |d coefficient / d eta| estimate (the C in C*eta)
  std::vector<FreqResult> samples;
};

/// Quadratic-in-eta extrapolation of lz_freq_numeric to eta = 0 over a
/// three-point ladder.
inline FreqExtrapolation lz_freq_extrapolated(double alpha, double beta,
                                              const ModelBundle& model, const State& state,
                                              const std::array<double, 3>& etas = {1e-2, 3e-3,
                                                                                   1e-3},
                                              const LzPlateauTable* table = nullptr) {
  std::optional<LzPlateauTable> local;
  if (!table) {
    local.emplace(model, state);
    table = &*local;
  }
  FreqExtrapolation out;
  for (double eta : etas) {
    out.samples.push_back(lz_freq_numeric(alpha, beta, model, state, eta, 1e-10, table));
  }
  // exact quadratic through the three samples, evaluated at eta = 0
  const double e0 = etas[0], e1 = etas[1], e2 = etas[2];
  const cplx f0 = out.samples[0].coefficient, f1 = out.samples[1].coefficient,
             f2 = out.samples[2].coefficient;
  const cplx l0 = f0 * (e1 * e2) / ((e0 - e1) * (e0 - e2));
  const cplx l1 = f1 * (e0 * e2) / ((e1 - e0) * (e1 - e2));
  const cplx l2 = f2 * (e0 * e1) / ((e2 - e0) * (e2 - e1));
  out.value = l0 + l1 + l2;
  out.slope = std::abs((f0 - out.value) / e0);
  return out;
}

}  // namespace weakcorr
