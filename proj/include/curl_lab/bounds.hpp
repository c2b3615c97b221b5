#pragma once

// Closed-form surrogate-gap quantities relating the contrastive loss to the
// mean-supervised loss, together with the competing upper bounds used for
// comparison.

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "curl_lab/core_math.hpp"

namespace curl {

/// (C, K, L, prior) tuple that parameterizes every bound.
struct BoundParams {
  int num_classes;
  int num_negatives;
  double norm_bound;
  ClassPrior prior;

  BoundParams(int classes, int negatives, double norm, ClassPrior class_prior);
  static BoundParams uniform(int classes, int negatives, double norm);
};

/// ln(pi_(1) C^2 cosh^2(L^2) / K).
double delta_upper(const BoundParams& p);

/// H(pi) + ln K - 2 ln(K + 1) - 2 ln cosh(L^2).
double delta_lower(const BoundParams& p);

/// Smallest achievable losses under ||f|| <= L.
struct EssentialBounds {
  double ess_sup = 0.0;
  double ess_cont = 0.0;
};

/// ln(1 + (C - 1) e^{-2L^2}); valid for any prior.
double essential_sup(const BoundParams& p);

/// sum_m Binom(K, m, 1/C) ln(1 + m + (K - m) e^{-2L^2}). The binomial weights
/// assume a uniform prior; anything else throws UnsupportedConfiguration.
double essential_cont(const BoundParams& p);

EssentialBounds essential_bounds(const BoundParams& p);

enum class RegionConstraint { kSurrogateUpper = 0, kSurrogateLower, kEssentialSup, kEssentialCont };

struct RegionCheck {
  bool inside = false;
  /// Signed slack per constraint (positive means satisfied), indexed by
  /// RegionConstraint.
  std::array<double, 4> slacks{};
  double slack(RegionConstraint c) const { return slacks[static_cast<int>(c)]; }
};

/// Tests the four feasible-region constraints
///   l_sup <= l_cont + dU,  l_sup >= l_cont + dL,
///   l_sup >= ess_sup,      l_cont >= ess_cont.
/// A constraint passes when its slack is >= -tolerance. The ess_cont
/// constraint is skipped (slack reported as +inf) for non-uniform priors.
RegionCheck feasible_region_contains(const BoundParams& p, double l_cont, double l_sup,
                                     double tolerance = 0.0);

enum class InvalidReason { kNone = 0, kZeroCoverage, kZeroCoefficient, kNonUniformPrior };

std::string_view to_string(InvalidReason reason) noexcept;

/// A bound value that may be undefined. Undefined values are never encoded
/// as infinities.
struct BoundValue {
  double value = 0.0;
  bool valid = false;
  InvalidReason reason = InvalidReason::kNone;

  static BoundValue ok(double v) { return {v, true, InvalidReason::kNone}; }
  static BoundValue invalid(InvalidReason r) { return {0.0, false, r}; }
};

struct CompetitorBounds {
  BoundValue arora;
  BoundValue nozawa;
  BoundValue ash;
};

/// Upper bounds on the mean-supervised loss from prior analyses, in their
/// uniform-prior closed forms. Requires a uniform prior.
CompetitorBounds competitor_bounds(const BoundParams& p, double l_cont);

struct RelaxedDeltas {
  double delta_upper_nci = 0.0;
  double delta_lower_nci = 0.0;
};

/// Surrogate intercepts without conditional independence of anchor and
/// positive: each widened by 2L^2.
RelaxedDeltas ci_relaxed_deltas(const BoundParams& p);

struct InfoNce {
  double value = 0.0;
  /// l_cont >= 0 always satisfies the O(ln N) sample-estimator ceiling
  /// I <= 2 ln(K + 1) + 5; recorded for completeness.
  bool estimator_limit_ok = true;
};

/// I_NCE^{K+1} = ln(K + 1) - l_cont.
InfoNce info_nce_value(double l_cont, int num_negatives);

/// Multi-sample InfoNCE estimate computed directly from critic scores. Each
/// row is one tuple: scores[0] = s(x, x+), scores[1..K] = s(x, x-_k). Returns
/// the mean over rows of ln[e^{s0} / ((K+1)^{-1} sum_j e^{s_j})].
double info_nce_from_scores(std::span<const std::vector<double>> tuples);

/// Every derived quantity for one parameter setting. Competitor bounds and
/// I_NCE are evaluated at `l_cont`, which defaults to ess_cont. Under a
/// non-uniform prior ess_cont and the competitor bounds are unavailable, and
/// l_cont / info_nce stay empty unless a contrastive loss was supplied.
struct BoundsReport {
  int num_classes = 0;
  int num_negatives = 0;
  double norm_bound = 0.0;
  bool uniform_prior = true;
  std::optional<double> l_cont;
  double delta_upper = 0.0;
  double delta_lower = 0.0;
  double gap = 0.0;
  double ess_sup = 0.0;
  std::optional<double> ess_cont;
  double v_next = 0.0;
  double tau = 0.0;
  double e_log_col = 0.0;
  BoundValue arora_upper;
  BoundValue nozawa_upper;
  BoundValue ash_upper;
  std::optional<double> info_nce;
};

BoundsReport compute_bounds_report(const BoundParams& p, std::optional<double> l_cont = std::nullopt);

}  // namespace curl
