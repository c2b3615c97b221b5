#pragma once

// Randomized and exhaustive checks of the lemma inequalities, the surrogate
// sandwich on tiny instances, and the bound comparison table.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "curl_lab/bounds.hpp"

namespace curl {

/// Inequalities fail only when violated by more than this.
inline constexpr double kVerifyTolerance = 1e-9;

struct VerificationReport {
  std::string name;
  std::int64_t trials = 0;
  std::int64_t failures = 0;
  /// Smallest signed margin seen (negative means violated).
  double worst_margin = std::numeric_limits<double>::infinity();
  std::vector<std::pair<std::string, std::string>> params;
  /// First few failure descriptions.
  std::vector<std::string> notes;

  bool passed() const noexcept { return failures == 0 && trials > 0; }
  void record(double margin, double tolerance = kVerifyTolerance);
  /// Records a failed structural check (not a margin).
  void fail(std::string note);
  void merge(const VerificationReport& other);
  std::string to_json() const;
};

/// 2 ln N <= LSE(z) + LSE(-z) <= 2 ln(N cosh L^2) for z uniform in
/// [-L^2, L^2]^N, every N in 1..n_max and L in l_set, plus tightness at z = 0
/// and at the half/half vertex (N even), and random maxima <= vertex maxima.
VerificationReport check_lemma_lse(int n_max, const std::vector<double>& l_set, std::int64_t trials,
                                   std::uint64_t seed, int threads = 1);

/// ln softmax_0(-z) >= ln softmax_0(z) - 2 ln((K + 1) cosh L^2) for random
/// (z_0, z) in [-L^2, L^2]^{K+1}; for K <= 12 all 2^{K+1} vertices are swept,
/// the vertex maximum of LSE(z) + LSE(-z) is compared with the bound and a
/// vertex with ceil((K + 1) / 2) positive entries must attain it.
VerificationReport check_lemma_offset(int k_max, const std::vector<double>& l_set, std::int64_t trials,
                                      std::uint64_t seed, int threads = 1);

/// Largest LSE(z) + LSE(-z) over sign vertices with N entries, and the
/// number of positive entries of the first maximizing vertex (full sweep).
std::pair<double, int> vertex_sweep_max(int n, double norm_bound);

struct SandwichReports {
  /// Constraints 5a-5d under conditional independence (5d only for uniform
  /// priors).
  VerificationReport ci;
  /// Surrogate bounds widened by 2L^2 under random within-class couplings.
  VerificationReport non_ci;
};

/// Random tiny instances (C in 2..c_max, K in 1..k_max, 1..5 points per
/// class, h <= 4) evaluated exactly. Instances over the exact budget get a
/// smaller K.
SandwichReports check_sandwich(int instance_count, int c_max, int k_max, std::uint64_t seed, int threads = 1);

enum class CompareMode { kAtEssCont, kAtGivenLCont };

struct CompareRow {
  int num_classes = 0;
  int num_negatives = 0;
  double norm_bound = 0.0;
  double l_cont = 0.0;
  double ours_upper = 0.0;
  double ours_lower = 0.0;
  BoundValue arora;
  BoundValue nozawa;
  BoundValue ash;
  double ess_sup = 0.0;
};

/// One row per K, uniform prior. Bounds on l_sup: ours_upper = l_cont + dU,
/// ours_lower = l_cont + dL.
std::vector<CompareRow> compare_bounds_table(int num_classes, const std::vector<int>& k_list, double norm_bound,
                                             CompareMode mode, std::optional<double> l_cont = std::nullopt);

inline constexpr const char* kCompareCsvHeader =
    "C,K,L,l_cont,ours_upper,ours_lower,arora,arora_valid,nozawa,nozawa_valid,ash,ess_sup";

/// Header plus rows; invalid bounds are empty fields.
void write_compare_csv(const std::vector<CompareRow>& rows, std::ostream& out);

}  // namespace curl
