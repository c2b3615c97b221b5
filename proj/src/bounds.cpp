#include "curl_lab/bounds.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace curl {

BoundParams::BoundParams(int classes, int negatives, double norm, ClassPrior class_prior)
    : num_classes(classes), num_negatives(negatives), norm_bound(norm), prior(std::move(class_prior)) {
  if (num_classes < 2) throw DomainError("bound parameters need C >= 2");
  if (num_negatives < 1) throw DomainError("bound parameters need K >= 1");
  if (!(norm_bound >= 0.0) || !std::isfinite(norm_bound)) {
    throw DomainError("norm bound L must be finite and nonnegative");
  }
  if (prior.size() != num_classes) {
    throw DomainError("prior has " + std::to_string(prior.size()) + " entries but C = " +
                      std::to_string(num_classes));
  }
}

BoundParams BoundParams::uniform(int classes, int negatives, double norm) {
  if (classes < 2) throw DomainError("bound parameters need C >= 2");
  return BoundParams(classes, negatives, norm, ClassPrior::uniform(classes));
}

namespace {

double squared_norm_bound(const BoundParams& p) { return p.norm_bound * p.norm_bound; }

void require_uniform(const BoundParams& p, const char* what) {
  if (!p.prior.is_uniform()) {
    throw UnsupportedConfiguration(std::string(what) + " is only defined for a uniform class prior");
  }
}

}  // namespace

double delta_upper(const BoundParams& p) {
  const double c = p.num_classes;
  return std::log(p.prior.max()) - std::log(static_cast<double>(p.num_negatives)) + 2.0 * std::log(c) +
         2.0 * log_cosh(squared_norm_bound(p));
}

double delta_lower(const BoundParams& p) {
  const double k = p.num_negatives;
  return p.prior.entropy() + std::log(k) - 2.0 * std::log1p(k) - 2.0 * log_cosh(squared_norm_bound(p));
}

double essential_sup(const BoundParams& p) {
  const double decay = std::exp(-2.0 * squared_norm_bound(p));
  return std::log1p((p.num_classes - 1) * decay);
}

double essential_cont(const BoundParams& p) {
  require_uniform(p, "ess_cont");
  const int k = p.num_negatives;
  const double decay = std::exp(-2.0 * squared_norm_bound(p));
  const auto weights = binomial_pmf(k, 1.0 / p.num_classes);
  double sum = 0.0;
  double mass = 0.0;
  for (int m = k; m >= 0; --m) {
    sum += weights[m] * std::log1p(m + (k - m) * decay);
    mass += weights[m];
  }
  return sum / mass;
}

EssentialBounds essential_bounds(const BoundParams& p) { return {essential_sup(p), essential_cont(p)}; }

RegionCheck feasible_region_contains(const BoundParams& p, double l_cont, double l_sup, double tolerance) {
  if (!std::isfinite(l_cont) || !std::isfinite(l_sup)) throw DomainError("losses must be finite");
  RegionCheck out;
  out.slacks[0] = (l_cont + delta_upper(p)) - l_sup;
  out.slacks[1] = l_sup - (l_cont + delta_lower(p));
  out.slacks[2] = l_sup - essential_sup(p);
  out.slacks[3] = p.prior.is_uniform() ? l_cont - essential_cont(p) : std::numeric_limits<double>::infinity();
  out.inside = true;
  for (double s : out.slacks) out.inside = out.inside && s >= -tolerance;
  return out;
}

std::string_view to_string(InvalidReason reason) noexcept {
  switch (reason) {
    case InvalidReason::kNone: return "none";
    case InvalidReason::kZeroCoverage: return "zero_coverage";
    case InvalidReason::kZeroCoefficient: return "zero_coefficient";
    case InvalidReason::kNonUniformPrior: return "non_uniform_prior";
  }
  return "unknown";
}

CompetitorBounds competitor_bounds(const BoundParams& p, double l_cont) {
  require_uniform(p, "competitor bounds");
  const int c = p.num_classes;
  const int k = p.num_negatives;
  const double coverage = coupon_collector_prob(c, k + 1);
  // 1 - tau_K evaluated directly so it does not cancel for large K.
  const double no_collision = std::exp(k * std::log1p(-1.0 / c));
  const double e_log_col = expected_log_col_plus_one(c, k);

  CompetitorBounds out;
  if (coverage <= 0.0) {
    out.arora = BoundValue::invalid(InvalidReason::kZeroCoverage);
    out.nozawa = BoundValue::invalid(InvalidReason::kZeroCoverage);
  } else {
    if (no_collision <= 0.0) {
      out.arora = BoundValue::invalid(InvalidReason::kZeroCoefficient);
    } else {
      out.arora = BoundValue::ok((l_cont - e_log_col) / (no_collision * coverage));
    }
    out.nozawa = BoundValue::ok((2.0 * l_cont - e_log_col) / coverage);
  }

  if (no_collision <= 0.0) {
    out.ash = BoundValue::invalid(InvalidReason::kZeroCoefficient);
  } else {
    const double ceil_term = std::ceil(2.0 * (c - 1) * harmonic(c - 1) / k);
    out.ash = BoundValue::ok(2.0 / no_collision * ceil_term * (l_cont - e_log_col));
  }
  return out;
}

RelaxedDeltas ci_relaxed_deltas(const BoundParams& p) {
  const double slack = 2.0 * squared_norm_bound(p);
  return {delta_upper(p) + slack, delta_lower(p) - slack};
}

InfoNce info_nce_value(double l_cont, int num_negatives) {
  if (num_negatives < 1) throw DomainError("InfoNCE needs K >= 1");
  if (!std::isfinite(l_cont) || l_cont < 0.0) throw DomainError("contrastive loss must be finite and >= 0");
  const double log_n = std::log1p(static_cast<double>(num_negatives));
  const double value = log_n - l_cont;
  return {value, value <= 2.0 * log_n + 5.0};
}

double info_nce_from_scores(std::span<const std::vector<double>> tuples) {
  if (tuples.empty()) throw DomainError("InfoNCE estimate needs at least one tuple");
  double total = 0.0;
  for (const auto& scores : tuples) {
    if (scores.size() < 2) throw DomainError("each tuple needs a positive and at least one negative");
    const double log_mean = log_sum_exp(scores) - std::log(static_cast<double>(scores.size()));
    total += scores[0] - log_mean;
  }
  return total / static_cast<double>(tuples.size());
}

BoundsReport compute_bounds_report(const BoundParams& p, std::optional<double> l_cont) {
  BoundsReport r;
  r.num_classes = p.num_classes;
  r.num_negatives = p.num_negatives;
  r.norm_bound = p.norm_bound;
  r.uniform_prior = p.prior.is_uniform();
  r.delta_upper = delta_upper(p);
  r.delta_lower = delta_lower(p);
  r.gap = r.delta_upper - r.delta_lower;
  r.ess_sup = essential_sup(p);
  r.v_next = coupon_collector_prob(p.num_classes, p.num_negatives + 1);
  r.tau = collision_prob(p.num_classes, p.num_negatives);
  r.e_log_col = expected_log_col_plus_one(p.num_classes, p.num_negatives);
  if (r.uniform_prior) {
    r.ess_cont = essential_cont(p);
    r.l_cont = l_cont.value_or(*r.ess_cont);
    const auto comp = competitor_bounds(p, *r.l_cont);
    r.arora_upper = comp.arora;
    r.nozawa_upper = comp.nozawa;
    r.ash_upper = comp.ash;
  } else {
    r.l_cont = l_cont;
    r.arora_upper = BoundValue::invalid(InvalidReason::kNonUniformPrior);
    r.nozawa_upper = BoundValue::invalid(InvalidReason::kNonUniformPrior);
    r.ash_upper = BoundValue::invalid(InvalidReason::kNonUniformPrior);
  }
  if (r.l_cont) r.info_nce = info_nce_value(*r.l_cont, p.num_negatives).value;
  return r;
}

}  // namespace curl
