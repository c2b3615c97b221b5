#pragma once

// Scalar and combinatorial primitives shared by the bound and loss code.
// Everything here is a pure function of its arguments.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace curl {

/// Raised when an input lies outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised when a quantity is only defined for a configuration we do not
/// support (e.g. a non-uniform class prior where the closed form assumes 1/C).
class UnsupportedConfiguration : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A probability in [0, 1]. Construct through `ProbValue::from_computed` so
/// that round-off excursions below 1e-9 are clamped and anything larger is
/// reported as an error.
class ProbValue {
 public:
  static constexpr double kClampTolerance = 1e-9;

  constexpr ProbValue() = default;
  static ProbValue from_computed(double raw);

  constexpr double value() const noexcept { return value_; }
  constexpr operator double() const noexcept { return value_; }

 private:
  constexpr explicit ProbValue(double v) : value_(v) {}
  double value_ = 0.0;
};

/// Probability vector over latent classes.
///
/// Entries must be in [0, 1] and sum to one within 1e-12. Bound formulas
/// require at least two classes; that is enforced by `BoundParams`, so a
/// single-class prior is accepted here (it shows up after coarse-graining).
class ClassPrior {
 public:
  static constexpr double kSumTolerance = 1e-12;

  explicit ClassPrior(std::vector<double> probs);
  static ClassPrior uniform(int num_classes);

  std::span<const double> probs() const noexcept { return probs_; }
  int size() const noexcept { return static_cast<int>(probs_.size()); }
  double operator[](int c) const { return probs_.at(static_cast<std::size_t>(c)); }

  /// Largest entry, pi_(1).
  double max() const noexcept;
  double entropy() const noexcept;
  /// True when every entry equals 1/C up to 1e-12.
  bool is_uniform() const noexcept;

 private:
  std::vector<double> probs_;
};

/// ln sum_i exp(z_i) with a max shift. Throws DomainError on empty input.
double log_sum_exp(std::span<const double> z);

/// ln cosh(x) = |x| + log1p(exp(-2|x|)) - ln 2. Safe for any finite x.
double log_cosh(double x) noexcept;

/// Shannon entropy in nats, with 0 ln 0 = 0.
double entropy(const ClassPrior& prior) noexcept;

/// n-th harmonic number, summed smallest term first. n = 0 is a DomainError.
double harmonic(int n);

/// Probability that K iid uniform draws over C classes hit every class
/// (coupon-collector coverage). Evaluates the double sum
///   sum_{n=1}^{K} sum_{m=0}^{C-1} binom(C-1, m) (-1)^m (1 - (m+1)/C)^{n-1}
/// with 0^0 = 1, in double-double arithmetic so the alternating inner sum does
/// not cancel catastrophically. Accurate to ~1e-14 absolute for C <= 64,
/// K <= 8192. Returns exactly 0 when K < C.
ProbValue coupon_collector_prob(int num_classes, int num_draws);

/// Same coverage probability through the distinct-classes Markov chain.
/// Positive terms only; used above C = 64 and as a cross-check below it.
ProbValue coverage_prob_occupancy(int num_classes, int num_draws);

/// tau_K = 1 - (1 - 1/C)^K, via expm1/log1p.
ProbValue collision_prob(int num_classes, int num_negatives);

/// Binomial(K, p) pmf for m = 0..K, built by the multiplicative recurrence in
/// the log domain (no lgamma, no overflow for K ~ 1e4).
std::vector<double> binomial_pmf(int trials, double p);

/// E ln(Col + 1) with Col ~ Binomial(K, 1/C).
double expected_log_col_plus_one(int num_classes, int num_negatives);

}  // namespace curl
