#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "weakcorr/models.hpp"
#include "weakcorr/operator_algebra.hpp"

namespace weakcorr {

/// Grid for one detector coordinate. The initial wavefunction is
/// psi(x) = (pi/2)^{-1/4} exp(-x^2), i.e. <x> = 0, <x^2> = 1/4.
struct DetectorSpec {
  int n_grid = 256;
  double x_range = 8.0;

  double dx() const { return 2.0 * x_range / (n_grid - 1); }
  double grid_point(int i) const { return -x_range + i * dx(); }

  void validate() const {
    if (n_grid < 16) throw InvalidInputError("DetectorSpec: n_grid too small");
    if (x_range <= 0.0) throw InvalidInputError("DetectorSpec: x_range must be positive");
    // the Gaussian has width 0.5; a grid coarser than that cannot represent
    // the displaced wavefunctions
    if (dx() > 0.125) {
      throw InvalidInputError("DetectorSpec: grid too coarse to represent displacement (dx = " +
                              std::to_string(dx()) + ")");
    }
    const double norm = wavefunction_norm();
    if (std::abs(norm - 1.0) > 1e-10) {
      throw NumericalContractError("DetectorSpec: initial wavefunction norm " +
                                   std::to_string(norm) + " on the grid");
    }
  }

  static double psi(double x) {
    return std::pow(pi / 2.0, -0.25) * std::exp(-x * x);
  }

  double wavefunction_norm() const {
    double s = 0.0;
    for (int i = 0; i < n_grid; ++i) {
      const double p = psi(grid_point(i));
      s += p * p;
    }
    return s * dx();
  }

  /// Grid quadrature of <psi_c | f | psi_d> for displaced copies of the
  /// initial Gaussian, f in {1, x, p}.
  double overlap(double c, double d) const {
    double s = 0.0;
    for (int i = 0; i < n_grid; ++i) {
      const double x = grid_point(i);
      s += psi(x - c) * psi(x - d);
    }
    return s * dx();
  }
  double x_overlap(double c, double d) const {
    double s = 0.0;
    for (int i = 0; i < n_grid; ++i) {
      const double x = grid_point(i);
      s += x * psi(x - c) * psi(x - d);
    }
    return s * dx();
  }
  cplx p_overlap(double c, double d) const {
    // p = -i d/dx acting on the (analytic) displaced Gaussian
    double s = 0.0;
    for (int i = 0; i < n_grid; ++i) {
      const double x = grid_point(i);
      s += psi(x - c) * (-2.0 * (x - d)) * psi(x - d);
    }
    return cplx(0.0, -1.0) * s * dx();
  }
};

/// Instantaneous kick exp(-i g A (x) p_x) at the clock arrival time; the
/// narrow clock wavepacket is integrated out analytically, leaving the
/// detector displaced by g a in each eigenspace of A.
struct ClockKick {
  double time = 0.0;
  Operator coupled_observable = Operator::identity(1);
  double g = 0.02;
};

namespace detail {

struct KickBasis {
  Matrix v;
  RealVector lambda;
};

inline KickBasis kick_basis(const Operator& a) {
  const SpectralDecomposition sd = spectral_decomposition(a);
  return {sd.eigenvectors, sd.eigenvalues};
}

inline void check_grid_for_kick(const DetectorSpec& spec, double g,
                                const RealVector& lambda) {
  const double max_eig = lambda.cwiseAbs().maxCoeff();
  if (spec.x_range < 6.0 + g * max_eig) {
    throw InvalidInputError(
        "DetectorSpec: x_range " + std::to_string(spec.x_range) +
        " does not resolve the post-kick displacement (need >= " +
        std::to_string(6.0 + g * max_eig) + ")");
  }
}

}  // namespace detail

/// Effective unitary of one clock-scheduled kick: displacement by g*lambda_a
/// in the eigenbasis of the coupled observable. Exposes the explicit joint
/// system (x) detector-grid state for single-detector checks.
class EffectiveKick {
 public:
  EffectiveKick(const DetectorSpec& spec, const ClockKick& kick)
      : spec_(spec), g_(kick.g), basis_(detail::kick_basis(kick.coupled_observable)) {
    spec_.validate();
    detail::check_grid_for_kick(spec_, g_, basis_.lambda);
    // unitarity on the grid: displaced copies must keep unit norm
    for (int k = 0; k < basis_.lambda.size(); ++k) {
      const double d = g_ * basis_.lambda(k);
      if (std::abs(spec_.overlap(d, d) - 1.0) > 1e-10) {
        throw NumericalContractError("EffectiveKick: displaced wavefunction norm deviates");
      }
    }
  }

  /// Joint pure state after kicking a system state |psi>: rows indexed by the
  /// system basis, columns by the detector grid.
  Matrix apply_to(const Vector& system_state) const {
    const int d = static_cast<int>(system_state.size());
    const int n = spec_.n_grid;
    const Vector in_basis = basis_.v.adjoint() * system_state;
    Matrix joint(d, n);
    for (int k = 0; k < d; ++k) {
      const double shift = g_ * basis_.lambda(k);
      for (int i = 0; i < n; ++i) {
        joint(k, i) = in_basis(k) * DetectorSpec::psi(spec_.grid_point(i) - shift);
      }
    }
    return joint;  // still in the observable eigenbasis on the system index
  }

  /// Detector-position moment <x^m> after kicking a (possibly mixed) state.
  double detector_moment(const State& state, int m) const {
    const Matrix rho_a = basis_.v.adjoint() * state.rho() * basis_.v;
    double total = 0.0;
    for (int k = 0; k < basis_.lambda.size(); ++k) {
      const double p = std::max(0.0, rho_a(k, k).real());
      if (p == 0.0) continue;
      const double shift = g_ * basis_.lambda(k);
      double mom = 0.0;
      for (int i = 0; i < spec_.n_grid; ++i) {
        const double x = spec_.grid_point(i);
        const double w = DetectorSpec::psi(x - shift);
        mom += std::pow(x, m) * w * w;
      }
      total += p * mom * spec_.dx();
    }
    return total;
  }

  /// Detector marginal density on the grid after the kick (exact mixture of
  /// displaced Gaussians).
  RealVector detector_marginal(const State& state) const {
    const Matrix rho_a = basis_.v.adjoint() * state.rho() * basis_.v;
    RealVector f = RealVector::Zero(spec_.n_grid);
    for (int k = 0; k < basis_.lambda.size(); ++k) {
      const double p = std::max(0.0, rho_a(k, k).real());
      const double shift = g_ * basis_.lambda(k);
      for (int i = 0; i < spec_.n_grid; ++i) {
        const double w = DetectorSpec::psi(spec_.grid_point(i) - shift);
        f(i) += p * w * w;
      }
    }
    return f;
  }

  const DetectorSpec& spec() const { return spec_; }
  double g() const { return g_; }

 private:
  DetectorSpec spec_;
  double g_;
  detail::KickBasis basis_;
};

inline EffectiveKick integrate_clock_kick(const DetectorSpec& spec, const ClockKick& kick) {
  return EffectiveKick(spec, kick);
}

namespace detail {

/// sigma' = V (K o (V^dag sigma V)) V^dag with an (a,b)-kernel K.
inline Matrix kernel_update(const Matrix& sigma, const KickBasis& basis,
                            const std::function<cplx(double, double)>& kernel) {
  const int d = static_cast<int>(sigma.rows());
  Matrix s = basis.v.adjoint() * sigma * basis.v;
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b < d; ++b) {
      s(a, b) *= kernel(basis.lambda(a), basis.lambda(b));
    }
  }
  return basis.v * s * basis.v.adjoint();
}

inline Matrix free_evolution(const Matrix& sigma, const Operator& h, double dt) {
  if (dt == 0.0) return sigma;
  const Operator evolved = evolve(Operator::general(sigma), h, -dt);
  // state direction is opposite to the Heisenberg direction used by evolve()
  return evolved.entries();
}

}  // namespace detail

struct ClockRunResult {
  /// cumulative_moments[m] = <x_1 x_2 ... x_{m+1}> (detectors never re-couple,
  /// so the product over a prefix is unaffected by later kicks)
  std::vector<double> cumulative_moments;
  /// single_moments[j] = <x_j> with every other kick left unread
  std::vector<double> single_moments;
  double final_trace = 1.0;
};

/// Exact sequential clock-detector run: dense system reduced operators with
/// detector moments folded in through grid-quadrature Gaussian kernels. One
/// independent detector per kick; detectors are never re-coupled or traced
/// prematurely.
inline ClockRunResult sequential_clock_run(const State& state,
                                           const std::vector<ClockKick>& kicks,
                                           const Operator& h,
                                           const DetectorSpec& spec = {},
                                           double max_memory_mb = 2048.0) {
  if (kicks.empty()) throw InvalidInputError("sequential_clock_run: no kicks");
  for (size_t i = 0; i + 1 < kicks.size(); ++i) {
    if (!(kicks[i].time <= kicks[i + 1].time)) {
      throw InvalidInputError("sequential_clock_run: kicks must be time-ordered");
    }
  }
  if (kicks.size() > 4) {
    throw InvalidInputError("sequential_clock_run: at most 4 detectors supported");
  }
  const int d = state.dim();
  const double mem_mb = 16.0 * d * d * (kicks.size() + 4.0) / 1.0e6;
  if (mem_mb > max_memory_mb) {
    throw InvalidInputError("sequential_clock_run: memory budget exceeded (need about " +
                            std::to_string(mem_mb) + " MB)");
  }
  spec.validate();

  ClockRunResult res;
  res.single_moments.assign(kicks.size(), 0.0);

  // moment-bearing pass: every kick extracts its detector position
  Matrix sigma = state.rho();
  double prev_t = kicks.front().time;
  std::vector<detail::KickBasis> bases;
  for (const auto& k : kicks) bases.push_back(detail::kick_basis(k.coupled_observable));

  for (size_t j = 0; j < kicks.size(); ++j) {
    detail::check_grid_for_kick(spec, kicks[j].g, bases[j].lambda);
    sigma = detail::free_evolution(sigma, h, kicks[j].time - prev_t);
    prev_t = kicks[j].time;
    const double g = kicks[j].g;
    sigma = detail::kernel_update(sigma, bases[j], [&](double a, double b) {
      return cplx(spec.x_overlap(g * a, g * b), 0.0);
    });
    res.cumulative_moments.push_back(sigma.trace().real());
  }

  // plain pass per kick for the single-detector means
  for (size_t target = 0; target < kicks.size(); ++target) {
    Matrix s = state.rho();
    double t0 = kicks.front().time;
    for (size_t j = 0; j <= target; ++j) {
      s = detail::free_evolution(s, h, kicks[j].time - t0);
      t0 = kicks[j].time;
      const double g = kicks[j].g;
      if (j == target) {
        s = detail::kernel_update(s, bases[j], [&](double a, double b) {
          return cplx(spec.x_overlap(g * a, g * b), 0.0);
        });
      } else {
        s = detail::kernel_update(s, bases[j], [&](double a, double b) {
          return cplx(spec.overlap(g * a, g * b), 0.0);
        });
      }
    }
    res.single_moments[target] = s.trace().real();
  }

  // trace audit with no extraction at all
  Matrix s = state.rho();
  double t0 = kicks.front().time;
  for (size_t j = 0; j < kicks.size(); ++j) {
    s = detail::free_evolution(s, h, kicks[j].time - t0);
    t0 = kicks[j].time;
    const double g = kicks[j].g;
    s = detail::kernel_update(s, bases[j], [&](double a, double b) {
      return cplx(spec.overlap(g * a, g * b), 0.0);
    });
  }
  res.final_trace = s.trace().real();
  return res;
}

/// Rotationally invariant position detection for the planar trap: one
/// two-component detector per kick, coupled as g (X p_xD + Y p_yD); X and Y
/// commute, so the kick factorizes over their joint eigenbasis. Readout picks
/// a single detector axis (or none).
enum class XYReadout { None, X, Y };

struct XYKick {
  double time = 0.0;
  double g = 0.02;
  XYReadout readout = XYReadout::None;
};

namespace detail {

enum class AxisMoment { One, Pos, Mom };

inline cplx axis_factor(const DetectorSpec& spec, AxisMoment which, double c, double d) {
  switch (which) {
    case AxisMoment::One: return cplx(spec.overlap(c, d), 0.0);
    case AxisMoment::Pos: return cplx(spec.x_overlap(c, d), 0.0);
    case AxisMoment::Mom: return spec.p_overlap(c, d);
  }
  return 0.0;
}

struct XYBases {
  KickBasis x, y;
};

/// Joint (X, Y) eigen structure: both observables commute, and in the trap
/// models they act on different tensor factors.
inline Matrix xy_kernel_update(const Matrix& sigma, const KickBasis& bx, const KickBasis& by,
                               int dim_y, const DetectorSpec& spec, double g,
                               AxisMoment fx, AxisMoment fy) {
  // joint eigenvectors: kron(vx, vy); eigenvalues xi_i (X), ups_j (Y)
  const Matrix v = Eigen::kroneckerProduct(bx.v, by.v).eval();
  const int d = static_cast<int>(sigma.rows());
  Matrix s = v.adjoint() * sigma * v;
  for (int a = 0; a < d; ++a) {
    const double xa = bx.lambda(a / dim_y), ya = by.lambda(a % dim_y);
    for (int b = 0; b < d; ++b) {
      const double xb = bx.lambda(b / dim_y), yb = by.lambda(b % dim_y);
      s(a, b) *= axis_factor(spec, fx, g * xa, g * xb) *
                 axis_factor(spec, fy, g * ya, g * yb);
    }
  }
  return v * s * v.adjoint();
}

}  // namespace detail

struct XYRunResult {
  double readout_product = 0.0;     // product of the chosen per-kick readouts
  std::vector<double> lz_system;    // <Lz_sys> after each kick
  std::vector<double> lz_detector;  // <Lz_det> of each kick's detector pair
};

/// Sequence mixing single-axis kicks (observable given explicitly, e.g. the
/// angular-momentum magnetometer) and isotropic xy kicks. Entries with an
/// observable use a one-component detector; XYKick entries use the
/// two-component rotationally invariant coupling.
struct MixedKick {
  double time = 0.0;
  double g = 0.02;
  bool isotropic = false;
  Operator observable = Operator::identity(1);  // single-axis case
  XYReadout readout = XYReadout::None;          // isotropic case
  bool read_single = true;                      // single-axis case: extract x?
};

inline XYRunResult rotation_invariant_xy_run(const State& state,
                                             const std::vector<MixedKick>& kicks,
                                             const ModelBundle& trap,
                                             const DetectorSpec& spec = {}) {
  spec.validate();
  const int n_mode = trap.spec.truncation;
  if (trap.dim != n_mode * n_mode) {
    throw InvalidInputError("rotation_invariant_xy_run: needs a two-mode trap bundle");
  }
  // X = Xm (x) 1 and Y = 1 (x) Xm share the single-mode eigenbasis
  const Matrix am = detail::annihilation(n_mode);
  const Matrix xm = (am + am.adjoint()) / std::sqrt(2.0);
  const detail::KickBasis bm = detail::kick_basis(Operator::hermitian(xm));

  XYRunResult res;
  Matrix sigma = state.rho();
  double prev_t = kicks.front().time;
  const Matrix lz = trap.observable("Lz").entries();

  for (const auto& k : kicks) {
    sigma = detail::free_evolution(sigma, trap.hamiltonian, k.time - prev_t);
    prev_t = k.time;
    if (k.isotropic) {
      using AM = detail::AxisMoment;
      const AM fx = (k.readout == XYReadout::X) ? AM::Pos : AM::One;
      const AM fy = (k.readout == XYReadout::Y) ? AM::Pos : AM::One;
      // detector angular momentum bookkeeping needs the unread update too
      Matrix plain = detail::xy_kernel_update(sigma, bm, bm, n_mode, spec, k.g, AM::One, AM::One);
      const cplx xp = detail::xy_kernel_update(sigma, bm, bm, n_mode, spec, k.g,
                                               AM::Pos, AM::Mom).trace();
      const cplx px = detail::xy_kernel_update(sigma, bm, bm, n_mode, spec, k.g,
                                               AM::Mom, AM::Pos).trace();
      const double trace_norm = sigma.trace().real();
      res.lz_detector.push_back(((xp - px) / trace_norm).real());
      if (k.readout == XYReadout::None) {
        sigma = std::move(plain);
      } else {
        sigma = detail::xy_kernel_update(sigma, bm, bm, n_mode, spec, k.g, fx, fy);
      }
    } else {
      const detail::KickBasis ba = detail::kick_basis(k.observable);
      using AM = detail::AxisMoment;
      const AM f = k.read_single ? AM::Pos : AM::One;
      res.lz_detector.push_back(0.0);  // single-axis detector carries no Lz
      sigma = detail::kernel_update(sigma, ba, [&](double a, double b) {
        return detail::axis_factor(spec, f, k.g * a, k.g * b);
      });
    }
    res.lz_system.push_back((lz * sigma).trace().real() / sigma.trace().real());
  }
  res.readout_product = sigma.trace().real();
  return res;
}

}  // namespace weakcorr
