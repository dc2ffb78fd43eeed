#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "weakcorr/core.hpp"

namespace weakcorr {

using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

namespace detail {

inline bool is_diagonal(const Matrix& m) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  for (int j = 0; j < m.cols(); ++j) {
    for (int i = 0; i < m.rows(); ++i) {
      if (i != j && std::abs(m(i, j)) > 1e-14 * scale) return false;
    }
  }
  return true;
}

}  // namespace detail


/// Dense complex matrix on a labeled Hilbert space. Immutable after
/// construction; all module operations are pure functions over Operators.
class Operator {
 public:
  Operator(Matrix entries, bool hermitian_hint)
      : dim_(static_cast<int>(entries.rows())), entries_(std::move(entries)),
        hermitian_(hermitian_hint) {
    if (entries_.rows() != entries_.cols() || dim_ <= 0) {
      throw InvalidInputError("Operator: entries must be a nonempty square matrix");
    }
    if (hermitian_) {
      const double dev = max_abs(entries_ - entries_.adjoint());
      if (dev > construction_tol) {
        throw InvalidInputError("Operator: hermitian_hint set but max |M - M^dag| = " +
                                std::to_string(dev));
      }
    }
  }

  static Operator hermitian(Matrix entries) { return Operator(std::move(entries), true); }
  static Operator general(Matrix entries) { return Operator(std::move(entries), false); }
  static Operator identity(int dim) {
    return Operator(Matrix::Identity(dim, dim), true);
  }
  static Operator zero(int dim) { return Operator(Matrix::Zero(dim, dim), true); }

  int dim() const { return dim_; }
  const Matrix& entries() const { return entries_; }
  bool is_hermitian() const { return hermitian_; }

 private:
  int dim_;
  Matrix entries_;
  bool hermitian_;
};

/// Density matrix: trace one, Hermitian, positive within numerical tolerance.
class State {
 public:
  explicit State(Matrix rho) : dim_(static_cast<int>(rho.rows())), rho_(std::move(rho)) {
    if (rho_.rows() != rho_.cols() || dim_ <= 0) {
      throw InvalidInputError("State: rho must be a nonempty square matrix");
    }
    const double tr_dev = std::abs(rho_.trace() - cplx(1.0, 0.0));
    if (tr_dev > construction_tol) {
      throw InvalidInputError("State: trace(rho) deviates from 1 by " + std::to_string(tr_dev));
    }
    const double herm_dev = max_abs(rho_ - rho_.adjoint());
    if (herm_dev > construction_tol) {
      throw InvalidInputError("State: rho not Hermitian, max deviation " +
                              std::to_string(herm_dev));
    }
    double min_eig;
    if (detail::is_diagonal(rho_)) {
      min_eig = rho_.diagonal().real().minCoeff();
    } else {
      Eigen::SelfAdjointEigenSolver<Matrix> es(rho_, Eigen::EigenvaluesOnly);
      min_eig = es.eigenvalues().minCoeff();
    }
    if (min_eig < -1e-10) {
      throw InvalidInputError("State: minimum eigenvalue " + std::to_string(min_eig) +
                              " below positivity tolerance");
    }
  }

  static State pure(const Vector& psi) {
    const double n = psi.norm();
    if (n == 0.0) throw InvalidInputError("State::pure: zero vector");
    Vector u = psi / n;
    return State(u * u.adjoint());
  }

  int dim() const { return dim_; }
  const Matrix& rho() const { return rho_; }

 private:
  int dim_;
  Matrix rho_;
};

/// Eigen decomposition of a Hermitian operator, with unitarity and
/// reconstruction checks (1e-10 relative).
struct SpectralDecomposition {
  RealVector eigenvalues;
  Matrix eigenvectors;  // columns
};

inline SpectralDecomposition spectral_decomposition(const Operator& h) {
  if (!h.is_hermitian()) {
    throw InvalidInputError("spectral_decomposition: operator must be Hermitian");
  }
  if (detail::is_diagonal(h.entries())) {
    // permutation eigenbasis sorted by eigenvalue, no dense solve
    const int d = h.dim();
    std::vector<int> order(d);
    for (int i = 0; i < d; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return h.entries()(a, a).real() < h.entries()(b, b).real();
    });
    SpectralDecomposition sd;
    sd.eigenvalues.resize(d);
    sd.eigenvectors = Matrix::Zero(d, d);
    for (int k = 0; k < d; ++k) {
      sd.eigenvalues(k) = h.entries()(order[k], order[k]).real();
      sd.eigenvectors(order[k], k) = 1.0;
    }
    return sd;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(h.entries());
  SpectralDecomposition sd{es.eigenvalues(), es.eigenvectors()};
  const int d = h.dim();
  const double scale = std::max(1.0, max_abs(h.entries()));
  const double recon = max_abs(sd.eigenvectors * sd.eigenvalues.asDiagonal() *
                                   sd.eigenvectors.adjoint() - h.entries());
  if (recon > 1e-10 * scale) {
    throw NumericalContractError("spectral_decomposition: reconstruction error " +
                                 std::to_string(recon));
  }
  const double unit = max_abs(sd.eigenvectors.adjoint() * sd.eigenvectors -
                              Matrix::Identity(d, d));
  if (unit > 1e-10) {
    throw NumericalContractError("spectral_decomposition: eigenvector matrix not unitary");
  }
  return sd;
}

inline void check_same_dim(const Operator& a, const Operator& b, const char* where) {
  if (a.dim() != b.dim()) {
    throw InvalidInputError(std::string(where) + ": dimension mismatch " +
                            std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
}

/// ab - ba
inline Operator commutator(const Operator& a, const Operator& b) {
  check_same_dim(a, b, "commutator");
  return Operator::general(a.entries() * b.entries() - b.entries() * a.entries());
}

/// ab + ba
inline Operator anticommutator(const Operator& a, const Operator& b) {
  check_same_dim(a, b, "anticommutator");
  Matrix m = a.entries() * b.entries() + b.entries() * a.entries();
  return Operator(std::move(m), a.is_hermitian() && b.is_hermitian());
}

/// Heisenberg-picture evolution of op under Hamiltonian h for time t
/// (hbar = 1). Phases follow the convention in which the ladder operator of a
/// mode of frequency w rotates as a(t) = exp(+i w t) a, i.e.
/// op(t) = exp(-iHt) op exp(+iHt); all state propagation in this library uses
/// the matching direction.
inline Operator evolve(const Operator& op, const Operator& h, double t) {
  if (!h.is_hermitian()) throw InvalidInputError("evolve: Hamiltonian must be Hermitian");
  check_same_dim(op, h, "evolve");
  const int d = h.dim();
  if (detail::is_diagonal(h.entries())) {
    Vector phase(d);
    for (int i = 0; i < d; ++i) {
      phase(i) = std::exp(cplx(0.0, -h.entries()(i, i).real() * t));
    }
    Matrix m = phase.asDiagonal() * op.entries() * phase.conjugate().asDiagonal();
    return Operator(std::move(m), op.is_hermitian());
  }
  const SpectralDecomposition sd = spectral_decomposition(h);
  Vector phase(d);
  for (int i = 0; i < d; ++i) phase(i) = std::exp(cplx(0.0, -sd.eigenvalues(i) * t));
  const Matrix u = sd.eigenvectors * phase.asDiagonal() * sd.eigenvectors.adjoint();
  Matrix m = u * op.entries() * u.adjoint();
  return Operator(std::move(m), op.is_hermitian());
}

/// exp(-H/kT)/Z, computed in the eigenbasis of h. kT = 0 gives the normalized
/// projector onto the (possibly degenerate) ground space.
inline State thermal_state(const Operator& h, double kT) {
  if (!h.is_hermitian()) throw InvalidInputError("thermal_state: Hamiltonian must be Hermitian");
  if (kT < 0.0) throw InvalidInputError("thermal_state: kT must be nonnegative");
  const SpectralDecomposition sd = spectral_decomposition(h);
  const int d = h.dim();
  const double e0 = sd.eigenvalues.minCoeff();
  RealVector w(d);
  if (kT == 0.0) {
    const double gap_tol = 1e-12 * std::max(1.0, std::abs(e0));
    for (int i = 0; i < d; ++i) w(i) = (sd.eigenvalues(i) - e0 <= gap_tol) ? 1.0 : 0.0;
  } else {
    for (int i = 0; i < d; ++i) w(i) = std::exp(-(sd.eigenvalues(i) - e0) / kT);
  }
  w /= w.sum();
  Matrix rho = sd.eigenvectors * w.cast<cplx>().asDiagonal() * sd.eigenvectors.adjoint();
  rho = cplx(0.5, 0.0) * (rho + rho.adjoint().eval());
  return State(std::move(rho));
}

/// Kronecker product a (x) b.
inline Operator tensor(const Operator& a, const Operator& b) {
  const int da = a.dim(), db = b.dim();
  Matrix m(da * db, da * db);
  for (int i = 0; i < da; ++i) {
    for (int j = 0; j < da; ++j) {
      m.block(i * db, j * db, db, db) = a.entries()(i, j) * b.entries();
    }
  }
  return Operator(std::move(m), a.is_hermitian() && b.is_hermitian());
}

/// Trace over the second tensor factor of an operator on C^{da} (x) C^{db}.
inline Operator partial_trace_second(const Operator& op, int da, int db) {
  if (op.dim() != da * db) {
    throw InvalidInputError("partial_trace_second: dimensions do not factor");
  }
  Matrix m = Matrix::Zero(da, da);
  for (int i = 0; i < da; ++i) {
    for (int j = 0; j < da; ++j) {
      cplx s = 0.0;
      for (int k = 0; k < db; ++k) s += op.entries()(i * db + k, j * db + k);
      m(i, j) = s;
    }
  }
  return Operator(std::move(m), op.is_hermitian());
}

/// Trace over the first tensor factor.
inline Operator partial_trace_first(const Operator& op, int da, int db) {
  if (op.dim() != da * db) {
    throw InvalidInputError("partial_trace_first: dimensions do not factor");
  }
  Matrix m = Matrix::Zero(db, db);
  for (int i = 0; i < db; ++i) {
    for (int j = 0; j < db; ++j) {
      cplx s = 0.0;
      for (int k = 0; k < da; ++k) s += op.entries()(k * db + i, k * db + j);
      m(i, j) = s;
    }
  }
  return Operator(std::move(m), op.is_hermitian());
}

inline cplx expectation_complex(const Operator& op, const State& state) {
  if (op.dim() != state.dim()) throw InvalidInputError("expectation: dimension mismatch");
  return (op.entries() * state.rho()).trace();
}

/// Tr(op rho). For a Hermitian op the value is real; the imaginary residue is
/// checked against 1e-10.
inline double expectation(const Operator& op, const State& state) {
  const cplx v = expectation_complex(op, state);
  if (op.is_hermitian() && std::abs(v.imag()) > propagated_tol) {
    throw NumericalContractError("expectation: imaginary residue " +
                                 std::to_string(v.imag()) + " for Hermitian operator");
  }
  return v.real();
}

/// op^k by repeated multiplication, k >= 1.
inline Operator operator_power(const Operator& op, int k) {
  if (k < 1) throw InvalidInputError("operator_power: exponent must be >= 1");
  Matrix m = op.entries();
  for (int i = 1; i < k; ++i) m = m * op.entries();
  // Integer powers of a Hermitian matrix stay Hermitian up to rounding.
  if (op.is_hermitian()) m = cplx(0.5, 0.0) * (m + m.adjoint().eval());
  return Operator(std::move(m), op.is_hermitian());
}

/// Largest singular value. For Hermitian input this equals max |eigenvalue|.
inline double spectral_norm(const Operator& op) {
  const Matrix& m = op.entries();
  const double herm_dev = max_abs(m - m.adjoint());
  if (herm_dev <= 1e-12 * std::max(1.0, max_abs(m))) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(cplx(0.5, 0.0) * (m + m.adjoint().eval()),
                                             Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

}  // namespace weakcorr
