#pragma once

#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <map>
#include <string>

#include "weakcorr/operator_algebra.hpp"

namespace weakcorr {

enum class ModelKind { TwoLevel, Oscillator1D, PlanarTrap, DetunedPlanarTrap };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::TwoLevel: return "two-level";
    case ModelKind::Oscillator1D: return "oscillator";
    case ModelKind::PlanarTrap: return "planar";
    case ModelKind::DetunedPlanarTrap: return "detuned-planar";
  }
  return "?";
}

/// Declarative description of a benchmark system. omega is dimensionless
/// (hbar = omega = 1 units by default); truncation is the Fock cutoff per
/// mode and is ignored for TwoLevel.
struct ModelSpec {
  ModelKind kind = ModelKind::TwoLevel;
  double omega = 1.0;
  int truncation = 24;
  double detuning_epsilon = 0.0;  // DetunedPlanarTrap: w_x = w(1+eps), w_y = w
};

inline constexpr int truncation_floor = 8;

struct ModelBundle {
  ModelSpec spec;
  int dim = 0;
  Operator hamiltonian = Operator::identity(1);
  std::map<std::string, Operator> named_observables;

  const Operator& observable(const std::string& name) const {
    auto it = named_observables.find(name);
    if (it == named_observables.end()) {
      throw InvalidInputError("ModelBundle: unknown observable '" + name + "'");
    }
    return it->second;
  }
};

namespace detail {

/// Truncated annihilation operator on n levels; cropping corrupts only the
/// top of the ladder.
inline Matrix annihilation(int n) {
  Matrix a = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) a(k - 1, k) = std::sqrt(static_cast<double>(k));
  return a;
}

inline Matrix number_op(int n) {
  Matrix m = Matrix::Zero(n, n);
  for (int k = 0; k < n; ++k) m(k, k) = static_cast<double>(k);
  return m;
}

}  // namespace detail

inline void validate(const ModelSpec& spec) {
  if (spec.kind != ModelKind::TwoLevel && spec.truncation < truncation_floor) {
    throw InvalidInputError("ModelSpec: truncation below floor of " +
                            std::to_string(truncation_floor));
  }
  if (spec.kind == ModelKind::DetunedPlanarTrap && std::abs(spec.detuning_epsilon) >= 0.5) {
    throw InvalidInputError("ModelSpec: |detuning_epsilon| must be < 0.5");
  }
  if (spec.omega <= 0.0) throw InvalidInputError("ModelSpec: omega must be positive");
}

/// Construct the benchmark Hamiltonian and named observables.
///   TwoLevel:   H = w |+><+|,  X = |+><-| + |-><+|   (basis order |->, |+>)
///   Oscillator: H = w n,       X = (a + a^dag)/sqrt(2)
///   PlanarTrap: H = w(n_x + n_y), X, Y per mode, Lz = i(a_x a_y^dag - a_y a_x^dag)
///   Detuned:    H = w(1+eps) n_x + w n_y, same observables
inline ModelBundle build(const ModelSpec& spec) {
  validate(spec);
  ModelBundle b;
  b.spec = spec;
  const double w = spec.omega;
  switch (spec.kind) {
    case ModelKind::TwoLevel: {
      b.dim = 2;
      Matrix h = Matrix::Zero(2, 2);
      h(1, 1) = w;  // index 0 = |->, index 1 = |+>
      Matrix x = Matrix::Zero(2, 2);
      x(0, 1) = 1.0;
      x(1, 0) = 1.0;
      b.hamiltonian = Operator::hermitian(h);
      b.named_observables.emplace("H", b.hamiltonian);
      b.named_observables.emplace("X", Operator::hermitian(x));
      break;
    }
    case ModelKind::Oscillator1D: {
      const int n = spec.truncation;
      b.dim = n;
      const Matrix a = detail::annihilation(n);
      b.hamiltonian = Operator::hermitian(w * detail::number_op(n));
      b.named_observables.emplace("H", b.hamiltonian);
      b.named_observables.emplace("X", Operator::hermitian((a + a.adjoint()) / std::sqrt(2.0)));
      b.named_observables.emplace("N", Operator::hermitian(detail::number_op(n)));
      break;
    }
    case ModelKind::PlanarTrap:
    case ModelKind::DetunedPlanarTrap: {
      const int n = spec.truncation;
      b.dim = n * n;
      const Matrix a = detail::annihilation(n);
      const Matrix num = detail::number_op(n);
      const Matrix id = Matrix::Identity(n, n);
      const Operator ax = Operator::general(Eigen::kroneckerProduct(a, id).eval());
      const Matrix xm = (a + a.adjoint()) / std::sqrt(2.0);
      const double wx = (spec.kind == ModelKind::DetunedPlanarTrap)
                            ? w * (1.0 + spec.detuning_epsilon)
                            : w;
      Matrix h = wx * Eigen::kroneckerProduct(num, id) + w * Eigen::kroneckerProduct(id, num);
      Matrix lz = cplx(0.0, 1.0) * (Eigen::kroneckerProduct(a, a.adjoint().eval()) -
                                    Eigen::kroneckerProduct(a.adjoint().eval(), a));
      b.hamiltonian = Operator::hermitian(std::move(h));
      b.named_observables.emplace("H", b.hamiltonian);
      b.named_observables.emplace("X", Operator::hermitian(Eigen::kroneckerProduct(xm, id).eval()));
      b.named_observables.emplace("Y", Operator::hermitian(Eigen::kroneckerProduct(id, xm).eval()));
      b.named_observables.emplace("Lz", Operator::hermitian(std::move(lz)));
      b.named_observables.emplace(
          "N", Operator::hermitian(Eigen::kroneckerProduct(num, id) +
                                   Eigen::kroneckerProduct(id, num)));
      break;
    }
  }
  return b;
}

/// Normalized projector onto the lowest-eigenvalue eigenspace of H.
inline State ground_state(const ModelBundle& bundle) {
  return thermal_state(bundle.hamiltonian, 0.0);
}

/// Occupation mass of `state` strictly above total quantum number `level`.
/// Used to certify that Fock cropping is irrelevant for a given state.
inline double population_above(const ModelBundle& bundle, const State& state, int level) {
  auto it = bundle.named_observables.find("N");
  if (it == bundle.named_observables.end()) return 0.0;  // TwoLevel: no ladder
  const Matrix& n = it->second.entries();
  double mass = 0.0;
  for (int i = 0; i < bundle.dim; ++i) {
    if (n(i, i).real() > static_cast<double>(level)) {
      mass += state.rho()(i, i).real();
    }
  }
  return mass;
}

}  // namespace weakcorr
