#pragma once

// Finite-population losses: mean classifier, mean-supervised loss, and the
// contrastive (InfoNCE) loss under the latent-class sampling process
//   c+, c-_1..c-_K ~ prior;  x, x+ ~ D_{c+};  x-_k ~ D_{c-_k},
// where D_c is the empirical distribution of the class-c points.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "curl_lab/core_math.hpp"

namespace curl {

/// Finite point set with latent-class labels in [0, C).
class LabeledDataset {
 public:
  /// `points` is row-major, size() * dim values. Every class in [0, C) must
  /// own at least one point.
  LabeledDataset(std::vector<double> points, std::size_t dim, std::vector<int> labels, int num_classes);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  int num_classes() const noexcept { return num_classes_; }

  std::span<const double> point(std::size_t i) const noexcept { return {points_.data() + i * dim_, dim_}; }
  int label(std::size_t i) const noexcept { return labels_[i]; }
  std::span<const int> labels() const noexcept { return labels_; }
  std::span<const double> raw_points() const noexcept { return points_; }

  /// Dataset indices of the class-c points, ascending.
  std::span<const std::size_t> members(int c) const { return buckets_.at(static_cast<std::size_t>(c)); }
  std::size_t class_size(int c) const { return members(c).size(); }
  std::size_t max_class_size() const noexcept;
  std::size_t min_class_size() const noexcept;

 private:
  std::vector<double> points_;
  std::size_t dim_;
  std::vector<int> labels_;
  int num_classes_;
  std::vector<std::vector<std::size_t>> buckets_;
};

/// Class frequencies of a dataset as a prior.
ClassPrior empirical_prior(const LabeledDataset& data);

/// Embedding table aligned with the points of one dataset: row i is f(x_i).
/// Every row satisfies ||f(x_i)|| <= L + 1e-9.
class FeatureMap {
 public:
  static constexpr double kNormTolerance = 1e-9;

  FeatureMap(std::vector<double> table, std::size_t dim, double norm_bound);

  /// Evaluates `fn(x, out)` on each dataset point.
  static FeatureMap from_function(const LabeledDataset& data, std::size_t dim, double norm_bound,
                                  const std::function<void(std::span<const double>, std::span<double>)>& fn);
  static FeatureMap zeros(std::size_t rows, std::size_t dim, double norm_bound);

  std::size_t size() const noexcept { return dim_ == 0 ? 0 : table_.size() / dim_; }
  std::size_t dim() const noexcept { return dim_; }
  double norm_bound() const noexcept { return norm_bound_; }
  std::span<const double> operator()(std::size_t i) const noexcept { return {table_.data() + i * dim_, dim_}; }
  std::span<const double> raw() const noexcept { return table_; }

  double dot(std::size_t i, std::size_t j) const noexcept;
  /// f scaled by s in (0, 1]; keeps the same norm bound.
  FeatureMap scaled(double s) const;

 private:
  std::vector<double> table_;
  std::size_t dim_;
  double norm_bound_;
};

/// Rows mu_c = mean of f over class-c points.
class MeanClassifier {
 public:
  MeanClassifier(std::vector<double> means, int num_classes, std::size_t dim);

  int num_classes() const noexcept { return num_classes_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> mean(int c) const noexcept {
    return {means_.data() + static_cast<std::size_t>(c) * dim_, dim_};
  }
  std::span<const double> raw() const noexcept { return means_; }

  /// Logits W^mu z for a feature vector z.
  std::vector<double> logits(std::span<const double> feature) const;

 private:
  std::vector<double> means_;
  int num_classes_;
  std::size_t dim_;
};

struct LossEstimate {
  enum class Mode { kExact, kMonteCarlo };

  double value = 0.0;
  double std_error = 0.0;
  std::int64_t n_samples = 0;
  std::uint64_t seed = 0;
  Mode mode = Mode::kExact;
};

/// Thrown when exact enumeration would exceed its term budget; the caller
/// should switch to the Monte Carlo estimator.
class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

MeanClassifier build_mean_classifier(const LabeledDataset& data, const FeatureMap& f);

/// E_{c ~ prior} E_{x ~ D_c} [-ln softmax_c(W^mu f(x))], exact over the
/// population. The classifier may come from a different split of the same
/// classes.
double mean_supervised_loss(const LabeledDataset& data, const ClassPrior& prior, const FeatureMap& f,
                            const MeanClassifier& mc);

/// Fraction of points whose argmax of W^mu f(x) equals their label.
double mean_classifier_accuracy(const LabeledDataset& data, const FeatureMap& f, const MeanClassifier& mc);

/// Joint law of (anchor, positive) inside each class. The default is
/// conditional independence (x+ ~ D_c regardless of x). A coupling supplies,
/// for each class c, a row-stochastic n_c x n_c matrix P with
/// P[i][j] = Pr(x+ = member j | x = member i).
class PositiveCoupling {
 public:
  static PositiveCoupling independent() { return PositiveCoupling{}; }
  /// x+ = x.
  static PositiveCoupling identity(const LabeledDataset& data);
  explicit PositiveCoupling(std::vector<std::vector<double>> per_class_rows_major);

  bool is_independent() const noexcept { return rows_.empty(); }
  /// Row i of class c's matrix.
  std::span<const double> row(int c, std::size_t i, std::size_t class_size) const noexcept {
    return {rows_[static_cast<std::size_t>(c)].data() + i * class_size, class_size};
  }
  void validate(const LabeledDataset& data) const;

 private:
  PositiveCoupling() = default;
  std::vector<std::vector<double>> rows_;
};

inline constexpr double kDefaultExactBudget = 1e7;

/// Naive tuple count C^{K+1} * n_max^{K+2} that the exact enumerator is
/// gated on.
double exact_term_count(const LabeledDataset& data, int num_negatives) noexcept;

/// Exact expectation of the contrastive loss. Negatives are iid over points
/// with weight pi_c / n_c, so they are enumerated as multisets with
/// multinomial weights. Throws BudgetExceeded when exact_term_count exceeds
/// `budget`.
LossEstimate contrastive_loss_exact(const LabeledDataset& data, const ClassPrior& prior, const FeatureMap& f,
                                    int num_negatives,
                                    const PositiveCoupling& coupling = PositiveCoupling::independent(),
                                    double budget = kDefaultExactBudget);

/// Monte Carlo estimate over n_samples independent (K+2)-tuples. Chunked
/// substreams make the result independent of `threads`.
/// single_precision_gram: when the pairwise Gram matrix is used, build it in
/// float (scores off by ~1e-7 for unit-norm features).
LossEstimate contrastive_loss_mc(const LabeledDataset& data, const ClassPrior& prior, const FeatureMap& f,
                                 int num_negatives, std::int64_t n_samples, std::uint64_t seed, int threads = 1,
                                 bool single_precision_gram = false);

/// Critic scores of sampled tuples: row = [f(x).f(x+), f(x).f(x-_1), ...].
/// Uses the same sampler and substreams as contrastive_loss_mc.
std::vector<std::vector<double>> sample_tuple_scores(const LabeledDataset& data, const ClassPrior& prior,
                                                     const FeatureMap& f, int num_negatives,
                                                     std::int64_t n_samples, std::uint64_t seed);

/// Mean per-tuple contrastive loss of precomputed scores.
double contrastive_loss_from_scores(std::span<const std::vector<double>> tuples);

struct ProbeOptions {
  int epochs = 200;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
  /// Start from (W^mu of the training split, zero bias) instead of a small
  /// random W.
  bool warm_start_mean = true;
};

struct ProbeResult {
  double accuracy = 0.0;
  /// C x h, row-major.
  std::vector<double> weights;
  std::vector<double> bias;
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
};

/// Multinomial logistic regression on frozen features, full-batch gradient
/// descent with step halving so the training loss never increases.
ProbeResult linear_probe(const LabeledDataset& train, const FeatureMap& f_train, const LabeledDataset& eval,
                         const FeatureMap& f_eval, const ProbeOptions& options);

/// Relabels through a surjection [C] -> [C'].
LabeledDataset coarse_grain(const LabeledDataset& data, std::span<const int> mapping);

/// Prior over coarse classes: sum of latent masses mapped to each.
ClassPrior coarse_prior(const ClassPrior& prior, std::span<const int> mapping);

/// Keeps only the listed classes, relabeled 0..|Y|-1 in the given order.
LabeledDataset restrict_to_classes(const LabeledDataset& data, std::span<const int> classes);

/// Indices (into `data`) of the points kept by restrict_to_classes.
std::vector<std::size_t> restricted_indices(const LabeledDataset& data, std::span<const int> classes);

/// Prior restricted to `classes` and renormalized.
ClassPrior restricted_prior(const ClassPrior& prior, std::span<const int> classes);

/// Rows of `f` at the given dataset indices.
FeatureMap select_rows(const FeatureMap& f, std::span<const std::size_t> indices);

}  // namespace curl
