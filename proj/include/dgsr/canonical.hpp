#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dgsr/expr.hpp"

namespace dgsr {

/// Rational normal form P/Q over variables and interned kernels (sin, cos, exp,
/// log, sqrt, pow of canonical arguments). `key` is a deterministic rendering:
/// equal keys imply equal forms.
struct CanonicalForm {
  std::string key;
  std::string numerator;
  std::string denominator;  // "1" when the form is a polynomial
  bool exact = true;        // all coefficients are exact rationals
};

/// Unbound placeholders (empty consts with const slots) canonicalize as the
/// symbols c0, c1, ... so skeletons still get a well-defined key.
CanonicalForm canonicalize(const ExprTree& tree, std::span<const double> consts = {});

/// Shorthand for canonicalize(tree, consts).key.
std::string canonical_key(const ExprTree& tree, std::span<const double> consts = {});

enum class Equivalence { Equal, NotEqual, Undecided };

std::string_view equivalence_name(Equivalence e);

/// Per-variable sampling box for the numeric falsifier.
struct FalsifierDomain {
  std::vector<std::pair<double, double>> bounds;  // index k -> range of x_{k+1}
  double default_lo = 0.5;
  double default_hi = 2.0;
  int points = 30;
  double rel_tol = 1e-9;
  std::uint64_t seed = 0x5eed;
};

/// Equal when canonical forms coincide (or cross-multiplication cancels);
/// otherwise the falsifier decides NotEqual, or Undecided when all sampled
/// points agree.
Equivalence symbolically_equal(const ExprTree& f, std::span<const double> f_consts,
                               const ExprTree& g, std::span<const double> g_consts,
                               const FalsifierDomain& domain = {});

inline Equivalence symbolically_equal(const ExprTree& f, const ExprTree& g,
                                      const FalsifierDomain& domain = {}) {
  return symbolically_equal(f, {}, g, {}, domain);
}

}  // namespace dgsr
