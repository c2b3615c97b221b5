#pragma once

// Circle dataset and contrastive MLP training with per-epoch trajectory
// records.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "curl_lab/losses.hpp"
#include "curl_lab/parallel.hpp"

namespace curl {

/// Class c (0-based) points are uniform draws from [-0.5, 0.5]^2 projected to
/// the circle of radius (c + 2) / 2.
LabeledDataset gen_circle(int num_classes, int n_per_class, std::uint64_t seed);

struct SplitDatasets {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

/// Per-class shuffle, first round(fraction * n_c) points to train. Each class
/// keeps at least one point on both sides.
SplitDatasets stratified_split(const LabeledDataset& data, double train_fraction, std::uint64_t seed);

/// Minibatch negatives. Points 0..B-1 are anchors, B..2B-1 their positives,
/// and every one of the 2B points acts as an anchor against its partner. For
/// each, K negatives are drawn without replacement from the other 2B - 2
/// points with at most one per pair while K <= B - 1; beyond that, the
/// remaining draws come from the unused partners. Returns 2B rows of K
/// indices.
std::vector<int> sample_batch_negatives(Rng& rng, int batch_pairs, int num_negatives);

/// 2-d -> h MLP with ReLU on hidden layers and L2-normalized output.
class ContrastiveMlp {
 public:
  static constexpr double kNormEpsilon = 1e-12;

  /// Weights U(+-init_scale / sqrt(fan_in)), biases U(+-1 / sqrt(fan_in)).
  ContrastiveMlp(std::vector<int> dims, std::uint64_t seed, double init_scale = 0.1);
  ~ContrastiveMlp();
  ContrastiveMlp(const ContrastiveMlp&);
  ContrastiveMlp& operator=(const ContrastiveMlp&);
  ContrastiveMlp(ContrastiveMlp&&) noexcept;
  ContrastiveMlp& operator=(ContrastiveMlp&&) noexcept;

  const std::vector<int>& dims() const noexcept;
  std::size_t num_parameters() const noexcept;
  /// Flattened as W_0 (in x out, row-major), b_0, W_1, b_1, ...
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> params);
  void zero_biases();
  void set_zero();

  /// Normalized outputs for n row-major points, n x h.
  std::vector<double> embed(std::span<const double> points, std::size_t n) const;
  FeatureMap features(const LabeledDataset& data) const;

  /// Minibatch contrastive loss for B pairs (row-major B x d each) and
  /// negatives from sample_batch_negatives; fills `grad` (same layout as
  /// parameters()) when given.
  double minibatch_loss(std::span<const double> anchors, std::span<const double> positives, int batch_pairs,
                        std::span<const int> negatives, int num_negatives, std::vector<double>* grad) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Max relative error between analytic and central-difference gradients
/// (step 1e-5) of the minibatch loss on a [2, 5, 5, 4] network, 3 pairs,
/// K = 2. Relative error is |a - n| / max(|a|, |n|, 1e-4).
double mlp_gradient_check(std::uint64_t seed);

struct TrainConfig {
  int num_classes = 10;
  int n_per_class = 1000;
  double train_fraction = 0.6;
  int num_negatives = 16;
  int batch_size = 1024;
  int epochs = 300;
  double learning_rate = 0.01;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  int lr_patience = 10;
  double lr_factor = 0.1;
  double init_scale = 0.1;
  /// Monte Carlo tuples per test point for the per-epoch l_cont.
  int eval_samples_per_point = 20;
  int threads = 1;

  void validate() const;
};

struct TrajectoryRecord {
  /// Completed training epochs when the record was taken.
  int epoch = 0;
  LossEstimate l_cont;
  double l_sup = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  /// Mean minibatch loss of the preceding epoch (NaN for epoch 0).
  double train_loss = 0.0;
};

struct TrainOutcome {
  std::vector<TrajectoryRecord> records;
  ContrastiveMlp model;
  SplitDatasets split;
};

/// `epochs` records, for 0 .. epochs - 1 completed epochs. Test-split
/// l_cont by Monte Carlo with a fixed evaluation seed, l_sup and accuracy
/// from train-split class means evaluated on the test split.
TrainOutcome train_contrastive_full(const TrainConfig& cfg,
                                    const std::function<void(const TrajectoryRecord&)>& on_record = {});
std::vector<TrajectoryRecord> train_contrastive(const TrainConfig& cfg);

}  // namespace curl
