#include "curl_lab/losses.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>

#include "curl_lab/parallel.hpp"

namespace curl {

// ---------------------------------------------------------------- dataset --

LabeledDataset::LabeledDataset(std::vector<double> points, std::size_t dim, std::vector<int> labels,
                               int num_classes)
    : points_(std::move(points)), dim_(dim), labels_(std::move(labels)), num_classes_(num_classes) {
  if (dim_ == 0) throw DomainError("dataset dimension must be positive");
  if (num_classes_ < 1) throw DomainError("dataset needs at least one class");
  if (points_.size() != labels_.size() * dim_) {
    throw DomainError("dataset has " + std::to_string(labels_.size()) + " labels but " +
                      std::to_string(points_.size()) + " coordinates for dimension " + std::to_string(dim_));
  }
  buckets_.resize(static_cast<std::size_t>(num_classes_));
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const int y = labels_[i];
    if (y < 0 || y >= num_classes_) throw DomainError("label " + std::to_string(y) + " outside [0, C)");
    buckets_[static_cast<std::size_t>(y)].push_back(i);
  }
  for (int c = 0; c < num_classes_; ++c) {
    if (buckets_[static_cast<std::size_t>(c)].empty()) {
      throw DomainError("class " + std::to_string(c) + " has no points");
    }
  }
}

std::size_t LabeledDataset::max_class_size() const noexcept {
  std::size_t m = 0;
  for (const auto& b : buckets_) m = std::max(m, b.size());
  return m;
}

std::size_t LabeledDataset::min_class_size() const noexcept {
  std::size_t m = buckets_.empty() ? 0 : buckets_.front().size();
  for (const auto& b : buckets_) m = std::min(m, b.size());
  return m;
}

ClassPrior empirical_prior(const LabeledDataset& data) {
  std::vector<double> probs(static_cast<std::size_t>(data.num_classes()));
  for (int c = 0; c < data.num_classes(); ++c) {
    probs[static_cast<std::size_t>(c)] =
        static_cast<double>(data.class_size(c)) / static_cast<double>(data.size());
  }
  // Renormalize away the last-ulp drift so the 1e-12 sum check holds.
  const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  for (double& p : probs) p /= total;
  return ClassPrior(std::move(probs));
}

// ------------------------------------------------------------ feature map --

FeatureMap::FeatureMap(std::vector<double> table, std::size_t dim, double norm_bound)
    : table_(std::move(table)), dim_(dim), norm_bound_(norm_bound) {
  if (dim_ == 0) throw DomainError("feature dimension must be positive");
  if (table_.size() % dim_ != 0) throw DomainError("feature table size is not a multiple of its dimension");
  if (!(norm_bound_ >= 0.0) || !std::isfinite(norm_bound_)) throw DomainError("norm bound must be finite, >= 0");
  for (std::size_t i = 0; i < size(); ++i) {
    const auto row = (*this)(i);
    const double norm = std::sqrt(std::inner_product(row.begin(), row.end(), row.begin(), 0.0));
    if (!(norm <= norm_bound_ + kNormTolerance)) {
      throw DomainError("feature row " + std::to_string(i) + " has norm " + std::to_string(norm) +
                        " above the bound " + std::to_string(norm_bound_));
    }
  }
}

FeatureMap FeatureMap::from_function(const LabeledDataset& data, std::size_t dim, double norm_bound,
                                     const std::function<void(std::span<const double>, std::span<double>)>& fn) {
  std::vector<double> table(data.size() * dim, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    fn(data.point(i), std::span<double>(table.data() + i * dim, dim));
  }
  return FeatureMap(std::move(table), dim, norm_bound);
}

FeatureMap FeatureMap::zeros(std::size_t rows, std::size_t dim, double norm_bound) {
  return FeatureMap(std::vector<double>(rows * dim, 0.0), dim, norm_bound);
}

double FeatureMap::dot(std::size_t i, std::size_t j) const noexcept {
  const double* a = table_.data() + i * dim_;
  const double* b = table_.data() + j * dim_;
  double s = 0.0;
  for (std::size_t d = 0; d < dim_; ++d) s += a[d] * b[d];
  return s;
}

FeatureMap FeatureMap::scaled(double s) const {
  if (!(s > 0.0 && s <= 1.0)) throw DomainError("scale must lie in (0, 1]");
  std::vector<double> t = table_;
  for (double& v : t) v *= s;
  return FeatureMap(std::move(t), dim_, norm_bound_);
}

FeatureMap select_rows(const FeatureMap& f, std::span<const std::size_t> indices) {
  std::vector<double> t;
  t.reserve(indices.size() * f.dim());
  for (std::size_t i : indices) {
    const auto row = f(i);
    t.insert(t.end(), row.begin(), row.end());
  }
  return FeatureMap(std::move(t), f.dim(), f.norm_bound());
}

// -------------------------------------------------------- mean classifier --

MeanClassifier::MeanClassifier(std::vector<double> means, int num_classes, std::size_t dim)
    : means_(std::move(means)), num_classes_(num_classes), dim_(dim) {
  if (means_.size() != static_cast<std::size_t>(num_classes_) * dim_) {
    throw DomainError("mean classifier shape mismatch");
  }
}

std::vector<double> MeanClassifier::logits(std::span<const double> feature) const {
  std::vector<double> out(static_cast<std::size_t>(num_classes_), 0.0);
  for (int c = 0; c < num_classes_; ++c) {
    const auto mu = mean(c);
    out[static_cast<std::size_t>(c)] = std::inner_product(mu.begin(), mu.end(), feature.begin(), 0.0);
  }
  return out;
}

MeanClassifier build_mean_classifier(const LabeledDataset& data, const FeatureMap& f) {
  if (f.size() != data.size()) throw DomainError("feature map does not match dataset size");
  const std::size_t h = f.dim();
  std::vector<double> means(static_cast<std::size_t>(data.num_classes()) * h, 0.0);
  for (int c = 0; c < data.num_classes(); ++c) {
    const auto idx = data.members(c);
    if (idx.empty()) throw DomainError("cannot build a class mean for an empty class");
    double* mu = means.data() + static_cast<std::size_t>(c) * h;
    for (std::size_t i : idx) {
      const auto row = f(i);
      for (std::size_t d = 0; d < h; ++d) mu[d] += row[d];
    }
    for (std::size_t d = 0; d < h; ++d) mu[d] /= static_cast<double>(idx.size());
  }
  return MeanClassifier(std::move(means), data.num_classes(), h);
}

double mean_supervised_loss(const LabeledDataset& data, const ClassPrior& prior, const FeatureMap& f,
                            const MeanClassifier& mc) {
  if (prior.size() != data.num_classes() || mc.num_classes() != data.num_classes()) {
    throw DomainError("prior, classifier and dataset disagree on the number of classes");
  }
  if (f.size() != data.size() || f.dim() != mc.dim()) throw DomainError("feature map shape mismatch");
  double total = 0.0;
  for (int c = 0; c < data.num_classes(); ++c) {
    if (prior[c] == 0.0) continue;
    const auto idx = data.members(c);
    double class_sum = 0.0;
    for (std::size_t i : idx) {
      const auto z = mc.logits(f(i));
      class_sum += log_sum_exp(z) - z[static_cast<std::size_t>(c)];
    }
    total += prior[c] * class_sum / static_cast<double>(idx.size());
  }
  return total;
}

double mean_classifier_accuracy(const LabeledDataset& data, const FeatureMap& f, const MeanClassifier& mc) {
  if (f.size() != data.size()) throw DomainError("feature map does not match dataset size");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto z = mc.logits(f(i));
    const auto best = std::max_element(z.begin(), z.end()) - z.begin();
    if (best == data.label(i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// --------------------------------------------------------------- coupling --

PositiveCoupling::PositiveCoupling(std::vector<std::vector<double>> per_class_rows_major)
    : rows_(std::move(per_class_rows_major)) {}

PositiveCoupling PositiveCoupling::identity(const LabeledDataset& data) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(data.num_classes()));
  for (int c = 0; c < data.num_classes(); ++c) {
    const std::size_t n = data.class_size(c);
    auto& m = rows[static_cast<std::size_t>(c)];
    m.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) m[i * n + i] = 1.0;
  }
  return PositiveCoupling(std::move(rows));
}

void PositiveCoupling::validate(const LabeledDataset& data) const {
  if (is_independent()) return;
  if (rows_.size() != static_cast<std::size_t>(data.num_classes())) {
    throw DomainError("coupling must provide one matrix per class");
  }
  for (int c = 0; c < data.num_classes(); ++c) {
    const std::size_t n = data.class_size(c);
    if (rows_[static_cast<std::size_t>(c)].size() != n * n) throw DomainError("coupling matrix has wrong size");
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = row(c, i, n);
      double s = 0.0;
      for (double v : r) {
        if (v < 0.0) throw DomainError("coupling probabilities must be nonnegative");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-12) throw DomainError("coupling rows must sum to 1");
    }
  }
}

// ------------------------------------------------------ contrastive: exact --

double exact_term_count(const LabeledDataset& data, int num_negatives) noexcept {
  const double c = data.num_classes();
  const double n = static_cast<double>(data.max_class_size());
  return std::pow(c, num_negatives + 1) * std::pow(n, num_negatives + 2);
}

namespace {

void check_loss_inputs(const LabeledDataset& data, const ClassPrior& prior, const FeatureMap& f,
                       int num_negatives) {
  if (num_negatives < 1) throw DomainError("contrastive loss needs K >= 1");
  if (prior.size() != data.num_classes()) throw DomainError("prior length differs from the number of classes");
  if (f.size() != data.size()) throw DomainError("feature map does not match dataset size");
}

// Enumerates all multisets of size K over `weights.size()` atoms and calls
// visit(probability, sum of exp-scores) for each.
class MultisetEnumerator {
 public:
  MultisetEnumerator(std::span<const double> weights, std::span<const double> exp_scores, int k)
      : weights_(weights), exp_scores_(exp_scores), k_(k) {
    k_factorial_ = 1.0;
    for (int i = 2; i <= k; ++i) k_factorial_ *= i;
  }

  template <class Visit>
  void run(Visit&& visit) const {
    recurse(0, k_, 1.0, 0.0, visit);
  }

 private:
  template <class Visit>
  void recurse(std::size_t atom, int remaining, double weight, double sum, Visit& visit) const {
    if (remaining == 0) {
      visit(weight * k_factorial_, sum);
      return;
    }
    const double w = weights_[atom];
    const double e = exp_scores_[atom];
    if (atom + 1 == weights_.size()) {
      double factor = 1.0;
      for (int i = 1; i <= remaining; ++i) factor *= w / i;
      visit(weight * factor * k_factorial_, sum + remaining * e);
      return;
    }
    double factor = 1.0;
    for (int take = 0; take <= remaining; ++take) {
      recurse(atom + 1, remaining - take, weight * factor, sum + take * e, visit);
      factor *= w / (take + 1);
    }
  }

  std::span<const double> weights_;
  std::span<const double> exp_scores_;
  int k_;
  double k_factorial_ = 1.0;
};

}  // namespace

LossEstimate contrastive_loss_exact(const LabeledDataset& data, const ClassPrior& prior, const FeatureMap& f,
                                    int num_negatives, const PositiveCoupling& coupling, double budget) {
  check_loss_inputs(data, prior, f, num_negatives);
  coupling.validate(data);
  const double terms = exact_term_count(data, num_negatives);
  if (terms > budget) {
    throw BudgetExceeded("exact enumeration needs ~" + std::to_string(terms) + " terms (budget " +
                         std::to_string(budget) + "); use the Monte Carlo estimator");
  }

  // Points that can be drawn as negatives, with their marginal weights.
  std::vector<std::size_t> atoms;
  std::vector<double> atom_weight;
  for (std::size_t j = 0; j < data.size(); ++j) {
    const int y = data.label(j);
    if (prior[y] > 0.0) {
      atoms.push_back(j);
      atom_weight.push_back(prior[y] / static_cast<double>(data.class_size(y)));
    }
  }

  std::vector<double> scores(atoms.size());
  std::vector<double> exp_scores(atoms.size());
  double total = 0.0;
  for (int c = 0; c < data.num_classes(); ++c) {
    if (prior[c] == 0.0) continue;
    const auto members = data.members(c);
    const std::size_t n_c = members.size();
    const double anchor_weight = prior[c] / static_cast<double>(n_c);
    std::vector<double> pos_exp(n_c), pos_score(n_c);
    for (std::size_t ai = 0; ai < n_c; ++ai) {
      const std::size_t a = members[ai];
      for (std::size_t j = 0; j < atoms.size(); ++j) scores[j] = f.dot(a, atoms[j]);
      double shift = *std::max_element(scores.begin(), scores.end());
      for (std::size_t pi = 0; pi < n_c; ++pi) {
        pos_score[pi] = f.dot(a, members[pi]);
        shift = std::max(shift, pos_score[pi]);
      }
      for (std::size_t j = 0; j < atoms.size(); ++j) exp_scores[j] = std::exp(scores[j] - shift);
      for (std::size_t pi = 0; pi < n_c; ++pi) pos_exp[pi] = std::exp(pos_score[pi] - shift);

      std::vector<double> pos_weight(n_c, 1.0 / static_cast<double>(n_c));
      if (!coupling.is_independent()) {
        const auto r = coupling.row(c, ai, n_c);
        pos_weight.assign(r.begin(), r.end());
      }

      double expected_log = 0.0;
      MultisetEnumerator(atom_weight, exp_scores, num_negatives).run([&](double w, double neg_sum) {
        double inner = 0.0;
        for (std::size_t pi = 0; pi < n_c; ++pi) {
          if (pos_weight[pi] != 0.0) inner += pos_weight[pi] * std::log(pos_exp[pi] + neg_sum);
        }
        expected_log += w * inner;
      });
      double mean_positive = 0.0;
      for (std::size_t pi = 0; pi < n_c; ++pi) mean_positive += pos_weight[pi] * pos_score[pi];
      total += anchor_weight * (expected_log + shift - mean_positive);
    }
  }
  return LossEstimate{total, 0.0, 0, 0, LossEstimate::Mode::kExact};
}

// ------------------------------------------------- contrastive: sampling --

namespace {

// Work is split by anchor: every sample first draws its anchor from one
// dedicated stream, then each chunk of consecutive dataset points completes
// the tuples of its anchors from its own substream. Tuples are iid either
// way, and grouping by anchor keeps each anchor's scores in cache.
constexpr std::size_t kAnchorsPerChunk = 256;
constexpr std::uint64_t kAnchorStream = ~0ULL;

// Walker alias table over dataset points, point i weighted pi_{y_i} / n_{y_i}.
class PointAlias {
 public:
  PointAlias(const LabeledDataset& data, const ClassPrior& prior) {
    const std::size_t n = data.size();
    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int y = data.label(i);
      scaled[i] = prior[y] / static_cast<double>(data.class_size(y)) * static_cast<double>(n);
    }
    std::vector<std::size_t> small, large;
    for (std::size_t i = 0; i < n; ++i) (scaled[i] < 1.0 ? small : large).push_back(i);
    while (!small.empty() && !large.empty()) {
      const std::size_t s = small.back();
      small.pop_back();
      const std::size_t l = large.back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (std::size_t i : large) prob_[i] = 1.0;
    // Leftovers here are round-off; a zero-weight point must never be kept.
    for (std::size_t i : small) {
      prob_[i] = 1.0;
      if (scaled[i] <= 0.0) throw DomainError("alias table construction lost probability mass");
    }
  }

  std::size_t draw(Rng& rng) const noexcept {
    const double u = uniform01(rng) * static_cast<double>(prob_.size());
    const auto i = std::min(static_cast<std::size_t>(u), prob_.size() - 1);
    return u - static_cast<double>(i) < prob_[i] ? i : alias_[i];
  }

 private:
  std::vector<double> prob_;
  std::vector<std::size_t> alias_;
};

struct ChunkTuples {
  std::size_t width = 0;
  std::vector<std::size_t> anchors;
  std::vector<std::size_t> idx;

  std::size_t size() const noexcept { return anchors.size(); }
};

class TuplePlan {
 public:
  TuplePlan(const LabeledDataset& data, const ClassPrior& prior, int num_negatives, std::int64_t n_samples,
            std::uint64_t seed)
      : data_(data), alias_(data, prior), k_(num_negatives), seed_(seed), counts_(data.size(), 0) {
    Rng rng = make_substream(seed, kAnchorStream);
    for (std::int64_t s = 0; s < n_samples; ++s) ++counts_[alias_.draw(rng)];
  }

  std::size_t num_chunks() const noexcept { return (data_.size() + kAnchorsPerChunk - 1) / kAnchorsPerChunk; }

  /// Calls fn(anchor, [positive, negatives...]) for every tuple of the chunk.
  template <class Fn>
  void run_chunk(std::size_t chunk, Fn&& fn) const {
    Rng rng = make_substream(seed_, chunk);
    std::vector<std::size_t> idx(static_cast<std::size_t>(k_) + 1);
    const std::size_t begin = chunk * kAnchorsPerChunk;
    const std::size_t end = std::min(data_.size(), begin + kAnchorsPerChunk);
    for (std::size_t a = begin; a < end; ++a) {
      const auto members = data_.members(data_.label(a));
      for (std::int64_t t = 0; t < counts_[a]; ++t) {
        idx[0] = members[uniform_index(rng, members.size())];
        for (std::size_t j = 1; j < idx.size(); ++j) idx[j] = alias_.draw(rng);
        fn(a, std::span<const std::size_t>(idx));
      }
    }
  }

  /// Every tuple of the chunk: anchor per tuple and flat [positive, negatives...] rows.
  ChunkTuples collect(std::size_t chunk) const {
    ChunkTuples out;
    out.width = static_cast<std::size_t>(k_) + 1;
    run_chunk(chunk, [&](std::size_t a, std::span<const std::size_t> idx) {
      out.anchors.push_back(a);
      out.idx.insert(out.idx.end(), idx.begin(), idx.end());
    });
    return out;
  }

 private:
  const LabeledDataset& data_;
  PointAlias alias_;
  int k_;
  std::uint64_t seed_;
  std::vector<std::int64_t> counts_;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Copies the strict lower triangle onto the upper one in 64 x 64 tiles.
template <class M>
void mirror_lower(M& g) {
  constexpr Eigen::Index kTile = 64;
  const Eigen::Index n = g.rows();
  auto* d = g.data();
  for (Eigen::Index jb = 0; jb < n; jb += kTile) {
    const Eigen::Index je = std::min(n, jb + kTile);
    for (Eigen::Index ib = 0; ib < je; ib += kTile) {
      const Eigen::Index ie = std::min(n, ib + kTile);
      for (Eigen::Index j = jb; j < je; ++j) {
        for (Eigen::Index i = ib; i < std::min(ie, j); ++i) d[i + j * n] = d[j + i * n];
      }
    }
  }
}

// Pairwise scores in double. The Gram matrix is materialized when the
// sampled tuples need more inner products than an eighth of its entries.
class ScoreTable {
 public:
  ScoreTable(const FeatureMap& f, std::int64_t dots_needed, bool single_gram = false)
      : table_(f.raw().data(), static_cast<Eigen::Index>(f.size()), static_cast<Eigen::Index>(f.dim())) {
    const auto n = static_cast<std::int64_t>(f.size());
    constexpr std::int64_t kMaxGramRows = 8192;
    if (n <= kMaxGramRows && dots_needed > n * n / 8) {
      if (single_gram) {
        const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> t = table_.cast<float>();
        gram_f_ = Eigen::MatrixXf::Zero(n, n);
        gram_f_.selfadjointView<Eigen::Lower>().rankUpdate(t);
        mirror_lower(gram_f_);
      } else {
        gram_ = Eigen::MatrixXd::Zero(n, n);
        gram_.selfadjointView<Eigen::Lower>().rankUpdate(table_);
        mirror_lower(gram_);
      }
      use_gram_ = true;
    }
  }

  bool has_gram() const noexcept { return use_gram_; }
  bool single_gram() const noexcept { return gram_f_.size() > 0; }
  const Eigen::MatrixXd& gram_double() const noexcept { return gram_; }
  const Eigen::MatrixXf& gram_single() const noexcept { return gram_f_; }

  double gram(std::size_t anchor, std::size_t j) const noexcept {
    const auto r = static_cast<Eigen::Index>(j);
    const auto c = static_cast<Eigen::Index>(anchor);
    return single_gram() ? static_cast<double>(gram_f_(r, c)) : gram_(r, c);
  }

  /// Scores laid out like t.idx. Without the Gram matrix the dots are taken
  /// grouped by the second row so each row is read once per chunk.
  std::vector<double> scores(const ChunkTuples& t) const {
    std::vector<double> out(t.idx.size());
    if (use_gram_) {
      for (std::size_t e = 0; e < t.idx.size(); ++e) out[e] = gram(t.anchors[e / t.width], t.idx[e]);
      return out;
    }
    const auto n = static_cast<std::size_t>(table_.rows());
    std::vector<std::uint32_t> start(n + 1, 0);
    for (std::size_t j : t.idx) ++start[j + 1];
    std::partial_sum(start.begin(), start.end(), start.begin());
    std::vector<std::uint32_t> order(t.idx.size());
    {
      std::vector<std::uint32_t> fill(start.begin(), start.end() - 1);
      for (std::size_t e = 0; e < t.idx.size(); ++e) order[fill[t.idx[e]]++] = static_cast<std::uint32_t>(e);
    }
    for (std::size_t j = 0; j < n; ++j) {
      const auto row = table_.row(static_cast<Eigen::Index>(j));
      for (std::uint32_t p = start[j]; p < start[j + 1]; ++p) {
        const std::uint32_t e = order[p];
        out[e] = table_.row(static_cast<Eigen::Index>(t.anchors[e / t.width])).dot(row);
      }
    }
    return out;
  }

 private:
  Eigen::Map<const RowMatrix> table_;
  Eigen::MatrixXd gram_;
  Eigen::MatrixXf gram_f_;
  bool use_gram_ = false;
};

}  // namespace

LossEstimate contrastive_loss_mc(const LabeledDataset& data, const ClassPrior& prior, const FeatureMap& f,
                                 int num_negatives, std::int64_t n_samples, std::uint64_t seed, int threads,
                                 bool single_precision_gram) {
  check_loss_inputs(data, prior, f, num_negatives);
  if (n_samples < 2) throw DomainError("Monte Carlo estimate needs at least two samples");
  const TuplePlan plan(data, prior, num_negatives, n_samples, seed);
  const ScoreTable score(f, n_samples * (num_negatives + 1), single_precision_gram);
  std::vector<RunningMoments> partial(plan.num_chunks());

  parallel_for_chunks(plan.num_chunks(), threads, [&](std::size_t chunk) {
    RunningMoments moments;
    if (score.has_gram()) {
      std::vector<double> logits(static_cast<std::size_t>(num_negatives) + 1);
      auto stream = [&](const auto& g) {
        plan.run_chunk(chunk, [&](std::size_t a, std::span<const std::size_t> idx) {
          const auto col = static_cast<Eigen::Index>(a);
          for (std::size_t k = 0; k < idx.size(); ++k) {
            logits[k] = static_cast<double>(g(static_cast<Eigen::Index>(idx[k]), col));
          }
          moments.add(log_sum_exp(logits) - logits[0]);
        });
      };
      if (score.single_gram()) {
        stream(score.gram_single());
      } else {
        stream(score.gram_double());
      }
      partial[chunk] = moments;
      return;
    }
    const ChunkTuples tuples = plan.collect(chunk);
    const std::vector<double> s = score.scores(tuples);
    for (std::size_t t = 0; t < tuples.size(); ++t) {
      const std::span<const double> logits(s.data() + t * tuples.width, tuples.width);
      moments.add(log_sum_exp(logits) - logits[0]);
    }
    partial[chunk] = moments;
  });

  RunningMoments total;
  for (const auto& m : partial) total.merge(m);
  const double se = std::sqrt(total.variance() / static_cast<double>(total.count));
  return LossEstimate{total.mean, se, n_samples, seed, LossEstimate::Mode::kMonteCarlo};
}

std::vector<std::vector<double>> sample_tuple_scores(const LabeledDataset& data, const ClassPrior& prior,
                                                     const FeatureMap& f, int num_negatives,
                                                     std::int64_t n_samples, std::uint64_t seed) {
  check_loss_inputs(data, prior, f, num_negatives);
  if (n_samples < 1) throw DomainError("need at least one tuple");
  const TuplePlan plan(data, prior, num_negatives, n_samples, seed);
  const ScoreTable score(f, 0);
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  for (std::size_t chunk = 0; chunk < plan.num_chunks(); ++chunk) {
    const ChunkTuples tuples = plan.collect(chunk);
    const std::vector<double> s = score.scores(tuples);
    for (std::size_t t = 0; t < tuples.size(); ++t) {
      out.emplace_back(s.begin() + static_cast<std::ptrdiff_t>(t * tuples.width),
                       s.begin() + static_cast<std::ptrdiff_t>((t + 1) * tuples.width));
    }
  }
  return out;
}

double contrastive_loss_from_scores(std::span<const std::vector<double>> tuples) {
  if (tuples.empty()) throw DomainError("need at least one tuple");
  double total = 0.0;
  for (const auto& row : tuples) total += log_sum_exp(row) - row[0];
  return total / static_cast<double>(tuples.size());
}

// ----------------------------------------------------------- linear probe --

namespace {

struct SoftmaxModel {
  int classes;
  std::size_t dim;
  std::vector<double> w;  // classes x dim
  std::vector<double> b;

  void logits(std::span<const double> x, std::span<double> out) const {
    for (int c = 0; c < classes; ++c) {
      const double* row = w.data() + static_cast<std::size_t>(c) * dim;
      double s = b[static_cast<std::size_t>(c)];
      for (std::size_t d = 0; d < dim; ++d) s += row[d] * x[d];
      out[static_cast<std::size_t>(c)] = s;
    }
  }
};

// Mean cross-entropy over points; optionally accumulates the gradient.
double probe_loss(const SoftmaxModel& m, const LabeledDataset& data, const FeatureMap& f,
                  std::vector<double>* grad_w, std::vector<double>* grad_b) {
  std::vector<double> z(static_cast<std::size_t>(m.classes));
  if (grad_w) {
    grad_w->assign(m.w.size(), 0.0);
    grad_b->assign(m.b.size(), 0.0);
  }
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = f(i);
    m.logits(x, z);
    const double lse = log_sum_exp(z);
    const int y = data.label(i);
    total += lse - z[static_cast<std::size_t>(y)];
    if (!grad_w) continue;
    for (int c = 0; c < m.classes; ++c) {
      const double g = (std::exp(z[static_cast<std::size_t>(c)] - lse) - (c == y ? 1.0 : 0.0)) * inv_n;
      double* row = grad_w->data() + static_cast<std::size_t>(c) * m.dim;
      for (std::size_t d = 0; d < m.dim; ++d) row[d] += g * x[d];
      (*grad_b)[static_cast<std::size_t>(c)] += g;
    }
  }
  return total * inv_n;
}

}  // namespace

ProbeResult linear_probe(const LabeledDataset& train, const FeatureMap& f_train, const LabeledDataset& eval,
                         const FeatureMap& f_eval, const ProbeOptions& options) {
  if (f_train.size() != train.size() || f_eval.size() != eval.size()) {
    throw DomainError("feature maps must match their datasets");
  }
  if (f_train.dim() != f_eval.dim()) throw DomainError("train and eval features differ in dimension");
  if (eval.num_classes() > train.num_classes()) throw DomainError("eval split has classes unseen in training");
  if (options.epochs < 0 || !(options.learning_rate > 0.0)) throw DomainError("invalid probe options");

  SoftmaxModel model{train.num_classes(), f_train.dim(), {}, {}};
  model.b.assign(static_cast<std::size_t>(model.classes), 0.0);
  if (options.warm_start_mean) {
    const auto mean = build_mean_classifier(train, f_train);
    model.w.assign(mean.raw().begin(), mean.raw().end());
  } else {
    Rng rng = make_substream(options.seed, 0);
    model.w.resize(static_cast<std::size_t>(model.classes) * model.dim);
    for (double& v : model.w) v = 0.02 * (uniform01(rng) - 0.5);
  }

  std::vector<double> gw, gb;
  double loss = probe_loss(model, train, f_train, &gw, &gb);
  const double initial = loss;
  double step = options.learning_rate;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    bool accepted = false;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      SoftmaxModel trial = model;
      for (std::size_t i = 0; i < trial.w.size(); ++i) trial.w[i] -= step * gw[i];
      for (std::size_t i = 0; i < trial.b.size(); ++i) trial.b[i] -= step * gb[i];
      const double trial_loss = probe_loss(trial, train, f_train, nullptr, nullptr);
      if (trial_loss <= loss) {
        model = std::move(trial);
        accepted = true;
      } else {
        step *= 0.5;
      }
    }
    if (!accepted) break;
    loss = probe_loss(model, train, f_train, &gw, &gb);
  }

  std::vector<double> z(static_cast<std::size_t>(model.classes));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    model.logits(f_eval(i), z);
    if (std::max_element(z.begin(), z.end()) - z.begin() == eval.label(i)) ++hits;
  }
  ProbeResult out;
  out.accuracy = static_cast<double>(hits) / static_cast<double>(eval.size());
  out.weights = std::move(model.w);
  out.bias = std::move(model.b);
  out.initial_train_loss = initial;
  out.final_train_loss = loss;
  return out;
}

// --------------------------------------------------------- class relabels --

namespace {

int validate_surjection(std::span<const int> mapping, int num_classes) {
  if (mapping.size() != static_cast<std::size_t>(num_classes)) {
    throw DomainError("mapping must assign every latent class");
  }
  const int coarse = *std::max_element(mapping.begin(), mapping.end()) + 1;
  std::vector<bool> hit(static_cast<std::size_t>(std::max(coarse, 0)), false);
  for (int m : mapping) {
    if (m < 0) throw DomainError("mapping targets must be nonnegative");
    hit[static_cast<std::size_t>(m)] = true;
  }
  if (std::find(hit.begin(), hit.end(), false) != hit.end()) throw DomainError("mapping is not surjective");
  return coarse;
}

}  // namespace

LabeledDataset coarse_grain(const LabeledDataset& data, std::span<const int> mapping) {
  const int coarse = validate_surjection(mapping, data.num_classes());
  std::vector<int> labels(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) labels[i] = mapping[static_cast<std::size_t>(data.label(i))];
  return LabeledDataset(std::vector<double>(data.raw_points().begin(), data.raw_points().end()), data.dim(),
                        std::move(labels), coarse);
}

ClassPrior coarse_prior(const ClassPrior& prior, std::span<const int> mapping) {
  const int coarse = validate_surjection(mapping, prior.size());
  std::vector<double> probs(static_cast<std::size_t>(coarse), 0.0);
  for (int c = 0; c < prior.size(); ++c) probs[static_cast<std::size_t>(mapping[static_cast<std::size_t>(c)])] += prior[c];
  return ClassPrior(std::move(probs));
}

std::vector<std::size_t> restricted_indices(const LabeledDataset& data, std::span<const int> classes) {
  std::vector<int> position(static_cast<std::size_t>(data.num_classes()), -1);
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const int c = classes[k];
    if (c < 0 || c >= data.num_classes()) throw DomainError("class subset entry out of range");
    if (position[static_cast<std::size_t>(c)] != -1) throw DomainError("class subset has duplicates");
    position[static_cast<std::size_t>(c)] = static_cast<int>(k);
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (position[static_cast<std::size_t>(data.label(i))] >= 0) keep.push_back(i);
  }
  return keep;
}

LabeledDataset restrict_to_classes(const LabeledDataset& data, std::span<const int> classes) {
  if (classes.empty()) throw DomainError("class subset must be nonempty");
  const auto keep = restricted_indices(data, classes);
  std::vector<int> position(static_cast<std::size_t>(data.num_classes()), -1);
  for (std::size_t k = 0; k < classes.size(); ++k) position[static_cast<std::size_t>(classes[k])] = static_cast<int>(k);
  std::vector<double> pts;
  std::vector<int> labels;
  for (std::size_t i : keep) {
    const auto p = data.point(i);
    pts.insert(pts.end(), p.begin(), p.end());
    labels.push_back(position[static_cast<std::size_t>(data.label(i))]);
  }
  return LabeledDataset(std::move(pts), data.dim(), std::move(labels), static_cast<int>(classes.size()));
}

ClassPrior restricted_prior(const ClassPrior& prior, std::span<const int> classes) {
  double mass = 0.0;
  for (int c : classes) mass += prior[c];
  if (!(mass > 0.0)) throw DomainError("class subset carries zero prior mass");
  std::vector<double> probs;
  for (int c : classes) probs.push_back(prior[c] / mass);
  return ClassPrior(std::move(probs));
}

}  // namespace curl
