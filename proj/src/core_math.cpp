#include "curl_lab/core_math.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

namespace curl {
namespace {

// Double-double value hi + lo with |lo| <= ulp(hi)/2. Only the handful of
// error-free transformations needed by the coverage sum are provided.
struct DoubleDouble {
  double hi = 0.0;
  double lo = 0.0;
};

inline DoubleDouble two_sum(double a, double b) {
  const double s = a + b;
  const double bb = s - a;
  const double err = (a - (s - bb)) + (b - bb);
  return {s, err};
}

inline DoubleDouble quick_two_sum(double a, double b) {
  const double s = a + b;
  return {s, b - (s - a)};
}

inline DoubleDouble two_prod(double a, double b) {
  const double p = a * b;
  return {p, std::fma(a, b, -p)};
}

inline DoubleDouble dd_add(DoubleDouble a, DoubleDouble b) {
  DoubleDouble s = two_sum(a.hi, b.hi);
  DoubleDouble t = two_sum(a.lo, b.lo);
  s.lo += t.hi;
  s = quick_two_sum(s.hi, s.lo);
  s.lo += t.lo;
  return quick_two_sum(s.hi, s.lo);
}

inline DoubleDouble dd_neg(DoubleDouble a) { return {-a.hi, -a.lo}; }

inline DoubleDouble dd_mul(DoubleDouble a, DoubleDouble b) {
  DoubleDouble p = two_prod(a.hi, b.hi);
  p.lo += a.hi * b.lo + a.lo * b.hi;
  return quick_two_sum(p.hi, p.lo);
}

// Quotient of two exactly representable integers, to double-double accuracy.
inline DoubleDouble dd_ratio(double num, double den) {
  const double q1 = num / den;
  const double r = std::fma(-q1, den, num);
  const double q2 = r / den;
  return quick_two_sum(q1, q2);
}

inline DoubleDouble dd_from_u128(unsigned __int128 x) {
  const double hi = static_cast<double>(x);
  const auto hi_int = static_cast<__int128>(hi);
  const double lo = static_cast<double>(static_cast<__int128>(x) - hi_int);
  return quick_two_sum(hi, lo);
}

// Row C-1 of Pascal's triangle in 128-bit integers (exact for C <= 128).
std::vector<unsigned __int128> binomial_row(int n) {
  std::vector<unsigned __int128> row(static_cast<std::size_t>(n) + 1, 0);
  row[0] = 1;
  for (int i = 1; i <= n; ++i) {
    for (int j = i; j >= 1; --j) row[j] += row[j - 1];
  }
  return row;
}

// Largest class count for which the alternating sum keeps ~1e-14 absolute
// accuracy in double-double (cancellation grows like 2^C).
constexpr int kAlternatingSumMaxClasses = 64;

double coverage_alternating_sum(int num_classes, int num_draws) {
  const int c = num_classes;
  const auto binom = binomial_row(c - 1);

  // powers[m] holds q_m^{n-1} with q_m = (C - m - 1) / C; starts at q^0 = 1
  // for every m, including q_{C-1} = 0 (the 0^0 = 1 convention).
  std::vector<DoubleDouble> ratio(static_cast<std::size_t>(c));
  std::vector<DoubleDouble> powers(static_cast<std::size_t>(c), DoubleDouble{1.0, 0.0});
  std::vector<DoubleDouble> signed_binom(static_cast<std::size_t>(c));
  for (int m = 0; m < c; ++m) {
    ratio[m] = dd_ratio(static_cast<double>(c - m - 1), static_cast<double>(c));
    const DoubleDouble b = dd_from_u128(binom[m]);
    signed_binom[m] = (m % 2 == 0) ? b : dd_neg(b);
  }

  DoubleDouble total;
  for (int n = 1; n <= num_draws; ++n) {
    DoubleDouble inner;
    for (int m = 0; m < c; ++m) {
      inner = dd_add(inner, dd_mul(signed_binom[m], powers[m]));
    }
    total = dd_add(total, inner);
    for (int m = 0; m < c; ++m) powers[m] = dd_mul(powers[m], ratio[m]);
  }
  return total.hi + total.lo;
}

// Number-of-distinct-classes Markov chain; all terms are nonnegative.
double coverage_occupancy(int num_classes, int num_draws) {
  const int c = num_classes;
  std::vector<double> dist(static_cast<std::size_t>(c) + 1, 0.0);
  dist[0] = 1.0;
  for (int n = 0; n < num_draws; ++n) {
    const int top = std::min(n + 1, c);
    for (int j = top; j >= 1; --j) {
      const double stay = static_cast<double>(j) / c;
      const double move = static_cast<double>(c - j + 1) / c;
      dist[j] = dist[j] * stay + dist[j - 1] * move;
    }
    dist[0] = 0.0;
  }
  return dist[c];
}

}  // namespace

ProbValue ProbValue::from_computed(double raw) {
  if (!std::isfinite(raw)) throw DomainError("probability is not finite");
  if (raw < 0.0) {
    if (raw < -kClampTolerance) {
      throw DomainError("probability below zero beyond round-off: " + std::to_string(raw));
    }
    return ProbValue(0.0);
  }
  if (raw > 1.0) {
    if (raw > 1.0 + kClampTolerance) {
      throw DomainError("probability above one beyond round-off: " + std::to_string(raw));
    }
    return ProbValue(1.0);
  }
  return ProbValue(raw);
}

ClassPrior::ClassPrior(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw DomainError("class prior must have at least one class");
  double total = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("class prior entries must lie in [0, 1]");
    total += p;
  }
  if (std::abs(total - 1.0) > kSumTolerance) {
    throw DomainError("class prior must sum to 1 (got " + std::to_string(total) + ")");
  }
}

ClassPrior ClassPrior::uniform(int num_classes) {
  if (num_classes < 1) throw DomainError("uniform prior needs at least one class");
  return ClassPrior(std::vector<double>(static_cast<std::size_t>(num_classes), 1.0 / num_classes));
}

double ClassPrior::max() const noexcept { return *std::max_element(probs_.begin(), probs_.end()); }

double ClassPrior::entropy() const noexcept { return curl::entropy(*this); }

bool ClassPrior::is_uniform() const noexcept {
  const double u = 1.0 / static_cast<double>(probs_.size());
  return std::all_of(probs_.begin(), probs_.end(),
                     [u](double p) { return std::abs(p - u) <= kSumTolerance; });
}

double log_sum_exp(std::span<const double> z) {
  if (z.empty()) throw DomainError("log_sum_exp of an empty vector");
  const Eigen::Map<const Eigen::ArrayXd> v(z.data(), static_cast<Eigen::Index>(z.size()));
  const double shift = v.maxCoeff();
  return shift + std::log((v - shift).exp().sum());
}

double log_cosh(double x) noexcept {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

double entropy(const ClassPrior& prior) noexcept {
  double h = 0.0;
  for (double p : prior.probs()) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double harmonic(int n) {
  if (n < 1) throw DomainError("harmonic number needs n >= 1");
  double sum = 0.0;
  for (int i = n; i >= 1; --i) sum += 1.0 / i;
  return sum;
}

ProbValue coupon_collector_prob(int num_classes, int num_draws) {
  if (num_classes < 2) throw DomainError("coverage probability needs C >= 2");
  if (num_draws < 0) throw DomainError("coverage probability needs K >= 0");
  if (num_draws < num_classes) return ProbValue::from_computed(0.0);
  if (num_classes <= kAlternatingSumMaxClasses) {
    return ProbValue::from_computed(coverage_alternating_sum(num_classes, num_draws));
  }
  return ProbValue::from_computed(coverage_occupancy(num_classes, num_draws));
}

ProbValue coverage_prob_occupancy(int num_classes, int num_draws) {
  if (num_classes < 2) throw DomainError("coverage probability needs C >= 2");
  if (num_draws < 0) throw DomainError("coverage probability needs K >= 0");
  return ProbValue::from_computed(coverage_occupancy(num_classes, num_draws));
}

ProbValue collision_prob(int num_classes, int num_negatives) {
  if (num_classes < 2) throw DomainError("collision probability needs C >= 2");
  if (num_negatives < 1) throw DomainError("collision probability needs K >= 1");
  const double log_miss = num_negatives * std::log1p(-1.0 / num_classes);
  return ProbValue::from_computed(-std::expm1(log_miss));
}

std::vector<double> binomial_pmf(int trials, double p) {
  if (trials < 0) throw DomainError("binomial pmf needs trials >= 0");
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("binomial pmf needs p in [0, 1]");
  std::vector<double> pmf(static_cast<std::size_t>(trials) + 1, 0.0);
  if (p == 0.0) {
    pmf.front() = 1.0;
    return pmf;
  }
  if (p == 1.0) {
    pmf.back() = 1.0;
    return pmf;
  }
  const double log_odds = std::log(p) - std::log1p(-p);
  // Compensated accumulation of log pmf(m).
  double log_term = trials * std::log1p(-p);
  double carry = 0.0;
  pmf[0] = std::exp(log_term);
  for (int m = 0; m < trials; ++m) {
    const double step = std::log(static_cast<double>(trials - m) / (m + 1)) + log_odds;
    const double y = step - carry;
    const double t = log_term + y;
    carry = (t - log_term) - y;
    log_term = t;
    pmf[m + 1] = std::exp(log_term);
  }
  return pmf;
}

double expected_log_col_plus_one(int num_classes, int num_negatives) {
  if (num_classes < 2) throw DomainError("E ln(Col + 1) needs C >= 2");
  if (num_negatives < 1) throw DomainError("E ln(Col + 1) needs K >= 1");
  const auto pmf = binomial_pmf(num_negatives, 1.0 / num_classes);
  double sum = 0.0;
  for (int m = num_negatives; m >= 1; --m) sum += pmf[m] * std::log1p(static_cast<double>(m));
  return sum;
}

}  // namespace curl
