#pragma once

#include <complex>
#include <stdexcept>
#include <string>

namespace weakcorr {

using cplx = std::complex<double>;

inline constexpr double pi = 3.14159265358979323846;

// Tolerance policy: construction-time checks at 1e-12, propagated-computation
// checks at 1e-10 (double precision headroom for nested products of ~10
// matrices).
inline constexpr double construction_tol = 1e-12;
inline constexpr double propagated_tol = 1e-10;

/// Rejected input: a precondition on caller-supplied data failed.
class InvalidInputError : public std::invalid_argument {
 public:
  explicit InvalidInputError(const std::string& what)
      : std::invalid_argument(what) {}
};

/// A numerical contract was violated during computation (not a user error).
class NumericalContractError : public std::runtime_error {
 public:
  explicit NumericalContractError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace weakcorr
