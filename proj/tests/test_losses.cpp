#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "curl_lab/bounds.hpp"
#include "curl_lab/losses.hpp"

using namespace curl;

namespace {

LabeledDataset make_data(std::mt19937_64& rng, int classes, int max_per_class, std::size_t dim = 1) {
  std::uniform_int_distribution<int> count(1, max_per_class);
  std::normal_distribution<double> g;
  std::vector<double> pts;
  std::vector<int> labels;
  for (int c = 0; c < classes; ++c) {
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < dim; ++d) pts.push_back(g(rng));
      labels.push_back(c);
    }
  }
  return LabeledDataset(pts, dim, labels, classes);
}

FeatureMap random_features(std::mt19937_64& rng, std::size_t rows, std::size_t h, double l) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> t(rows * h);
  for (std::size_t i = 0; i < rows; ++i) {
    double n = 0.0;
    for (std::size_t j = 0; j < h; ++j) n += (t[i * h + j] = g(rng)) * t[i * h + j];
    const double r = l * std::sqrt(u(rng)) / std::sqrt(n);
    for (std::size_t j = 0; j < h; ++j) t[i * h + j] *= r;
  }
  return FeatureMap(t, h, l);
}

ClassPrior random_prior(std::mt19937_64& rng, int c) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> w(static_cast<std::size_t>(c));
  double s = 0.0;
  for (double& v : w) s += (v = u(rng));
  for (double& v : w) v /= s;
  return ClassPrior(w);
}

// Term-by-term expectation over (c+, x, x+, x-_1..x-_K), negatives over all
// points with weight pi_c / n_c.
double brute_force_contrastive(const LabeledDataset& data, const ClassPrior& prior, const FeatureMap& f, int k) {
  const std::size_t n = data.size();
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = prior[data.label(i)] / static_cast<double>(data.class_size(data.label(i)));
  double total = 0.0;
  std::vector<std::size_t> neg(static_cast<std::size_t>(k), 0);
  std::vector<double> s(static_cast<std::size_t>(k) + 1);
  for (std::size_t x = 0; x < n; ++x) {
    if (w[x] == 0.0) continue;
    for (std::size_t xp : data.members(data.label(x))) {
      const double wp = w[x] / static_cast<double>(data.class_size(data.label(x)));
      std::fill(neg.begin(), neg.end(), 0);
      while (true) {
        double wn = wp;
        s[0] = f.dot(x, xp);
        for (int j = 0; j < k; ++j) {
          wn *= w[neg[static_cast<std::size_t>(j)]];
          s[static_cast<std::size_t>(j) + 1] = f.dot(x, neg[static_cast<std::size_t>(j)]);
        }
        if (wn > 0.0) total += wn * (log_sum_exp(s) - s[0]);
        int j = 0;
        while (j < k && ++neg[static_cast<std::size_t>(j)] == n) neg[static_cast<std::size_t>(j++)] = 0;
        if (j == k) break;
      }
    }
  }
  return total;
}

}  // namespace

TEST(Dataset, Validation) {
  EXPECT_THROW(LabeledDataset({0.0, 1.0}, 1, {0, 0}, 2), DomainError);
  EXPECT_THROW(LabeledDataset({0.0, 1.0}, 1, {0, 2}, 2), DomainError);
  EXPECT_THROW(LabeledDataset({0.0, 1.0, 2.0}, 2, {0, 1}, 2), DomainError);
  const LabeledDataset d({0.0, 1.0, 2.0}, 1, {1, 0, 1}, 2);
  EXPECT_EQ(d.class_size(1), 2u);
  EXPECT_EQ(d.members(1)[1], 2u);
  EXPECT_EQ(d.max_class_size(), 2u);
  EXPECT_EQ(d.min_class_size(), 1u);
}

TEST(FeatureMap, NormBoundEnforced) {
  EXPECT_THROW(FeatureMap({1.0, 1.0}, 2, 1.0), DomainError);
  EXPECT_NO_THROW(FeatureMap({0.6, 0.8}, 2, 1.0));
  const FeatureMap f({0.6, 0.8, 0.0, -1.0}, 2, 1.0);
  EXPECT_DOUBLE_EQ(f.dot(0, 1), -0.8);
  EXPECT_DOUBLE_EQ(f.scaled(0.5)(0)[1], 0.4);
}

TEST(MeanClassifier, ZeroMapGivesZeroMeans) {
  std::mt19937_64 rng(1);
  const auto d = make_data(rng, 4, 3);
  const auto mc = build_mean_classifier(d, FeatureMap::zeros(d.size(), 3, 1.0));
  for (double v : mc.raw()) EXPECT_EQ(v, 0.0);
}

TEST(MeanClassifier, OnePointPerClassAndSymmetricPairs) {
  const LabeledDataset one({0.0, 1.0}, 1, {0, 1}, 2);
  const FeatureMap f({0.6, 0.8, -1.0, 0.0}, 2, 1.0);
  const auto mc = build_mean_classifier(one, f);
  EXPECT_EQ(mc.mean(0)[1], 0.8);
  EXPECT_EQ(mc.mean(1)[0], -1.0);
  const LabeledDataset pair({0.0, 1.0}, 1, {0, 0}, 1);
  const auto m2 = build_mean_classifier(pair, FeatureMap({0.3, 0.4, -0.3, -0.4}, 2, 1.0));
  EXPECT_EQ(m2.mean(0)[0], 0.0);
  EXPECT_EQ(m2.mean(0)[1], 0.0);
}

TEST(MeanSupervisedLoss, Values) {
  std::mt19937_64 rng(2);
  const auto d = make_data(rng, 10, 4);
  const auto z = FeatureMap::zeros(d.size(), 2, 1.0);
  EXPECT_NEAR(mean_supervised_loss(d, ClassPrior::uniform(10), z, build_mean_classifier(d, z)), std::log(10.0),
              1e-14);

  const LabeledDataset two({0.0, 0.1, 1.0}, 1, {0, 0, 1}, 2);
  const FeatureMap f({1.0, 1.0, -1.0}, 1, 1.0);
  const auto mc = build_mean_classifier(two, f);
  EXPECT_NEAR(mean_supervised_loss(two, ClassPrior::uniform(2), f, mc), std::log1p(std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(mean_supervised_loss(two, ClassPrior::uniform(2), f, mc),
              essential_sup(BoundParams::uniform(2, 1, 1.0)), 1e-15);
}

TEST(MeanSupervisedLoss, DegeneratePriorUsesOneClass) {
  const LabeledDataset d({0.0, 1.0, 2.0}, 1, {0, 1, 1}, 2);
  const FeatureMap f({0.5, -0.2, 0.9}, 1, 1.0);
  const auto mc = build_mean_classifier(d, f);
  const double mu0 = 0.5, mu1 = 0.35;
  const double expected = std::log(std::exp(0.5 * mu0) + std::exp(0.5 * mu1)) - 0.5 * mu0;
  EXPECT_NEAR(mean_supervised_loss(d, ClassPrior({1.0, 0.0}), f, mc), expected, 1e-15);
}

TEST(ContrastiveExact, ZeroMap) {
  std::mt19937_64 rng(3);
  const auto d = make_data(rng, 3, 2);
  const auto e = contrastive_loss_exact(d, ClassPrior::uniform(3), FeatureMap::zeros(d.size(), 2, 1.0), 7);
  EXPECT_NEAR(e.value, std::log(8.0), 1e-14);
  EXPECT_EQ(e.std_error, 0.0);
  EXPECT_EQ(e.mode, LossEstimate::Mode::kExact);
}

TEST(ContrastiveExact, SingleRepeatedPoint) {
  const LabeledDataset d({0.0}, 1, {0}, 1);
  const FeatureMap f({0.7}, 1, 1.0);
  for (int k : {1, 3, 6}) {
    EXPECT_NEAR(contrastive_loss_exact(d, ClassPrior({1.0}), f, k).value, std::log1p(static_cast<double>(k)),
                1e-14);
  }
}

TEST(ContrastiveExact, TwoAntipodalPoints) {
  const LabeledDataset d({0.0, 1.0}, 1, {0, 1}, 2);
  const FeatureMap f({1.0, -1.0}, 1, 1.0);
  const double oracle = 0.5 * std::log1p(std::exp(-2.0)) + 0.5 * std::numbers::ln2;
  EXPECT_NEAR(contrastive_loss_exact(d, ClassPrior::uniform(2), f, 1).value, oracle, 1e-15);
  const auto mc = contrastive_loss_mc(d, ClassPrior::uniform(2), f, 1, 1000000, 99);
  EXPECT_LE(std::abs(mc.value - oracle), 3 * mc.std_error);
}

TEST(ContrastiveExact, MatchesBruteForce) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 25; ++t) {
    const int c = 1 + t % 3;
    const auto d = make_data(rng, c, 3);
    const auto prior = t % 2 ? random_prior(rng, c) : ClassPrior::uniform(c);
    const auto f = random_features(rng, d.size(), 2, 1.5);
    const int k = 1 + t % 3;
    EXPECT_NEAR(contrastive_loss_exact(d, prior, f, k).value, brute_force_contrastive(d, prior, f, k), 1e-12)
        << "trial " << t;
  }
}

TEST(ContrastiveExact, IdentityCoupling) {
  // x+ = x: positive score is ||f(x)||^2.
  const LabeledDataset d({0.0, 1.0, 2.0}, 1, {0, 0, 1}, 2);
  const FeatureMap f({0.6, 0.8, -0.5, 0.5, 0.0, 1.0}, 2, 1.0);
  const auto prior = ClassPrior::uniform(2);
  double oracle = 0.0;
  const double w[3] = {0.25, 0.25, 0.5};
  for (std::size_t x = 0; x < 3; ++x) {
    for (std::size_t n = 0; n < 3; ++n) {
      const std::vector<double> s{f.dot(x, x), f.dot(x, n)};
      oracle += w[x] * w[n] * (log_sum_exp(s) - s[0]);
    }
  }
  const auto coupling = PositiveCoupling::identity(d);
  EXPECT_NEAR(contrastive_loss_exact(d, prior, f, 1, coupling).value, oracle, 1e-15);
}

TEST(ContrastiveExact, CouplingValidation) {
  const LabeledDataset d({0.0, 1.0, 2.0}, 1, {0, 0, 1}, 2);
  const PositiveCoupling bad({{0.5, 0.4, 0.5, 0.5}, {1.0}});
  EXPECT_THROW(bad.validate(d), DomainError);
  const PositiveCoupling wrong_shape({{1.0}, {1.0}});
  EXPECT_THROW(wrong_shape.validate(d), DomainError);
}

TEST(ContrastiveExact, BudgetGuard) {
  std::mt19937_64 rng(5);
  const auto d = make_data(rng, 8, 5);
  const auto f = random_features(rng, d.size(), 2, 1.0);
  EXPECT_THROW(contrastive_loss_exact(d, ClassPrior::uniform(8), f, 12), BudgetExceeded);
}

TEST(ContrastiveMc, ZeroMapAndDeterminism) {
  std::mt19937_64 rng(6);
  const auto d = make_data(rng, 5, 6);
  const auto prior = ClassPrior::uniform(5);
  const auto z = contrastive_loss_mc(d, prior, FeatureMap::zeros(d.size(), 4, 1.0), 9, 5000, 1);
  EXPECT_NEAR(z.value, std::log(10.0), 1e-14);
  EXPECT_EQ(z.std_error, 0.0);

  const auto f = random_features(rng, d.size(), 3, 2.0);
  const auto a = contrastive_loss_mc(d, prior, f, 4, 30000, 42, 1);
  const auto b = contrastive_loss_mc(d, prior, f, 4, 30000, 42, 1);
  const auto c = contrastive_loss_mc(d, prior, f, 4, 30000, 42, 4);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.value, c.value);
  EXPECT_EQ(a.std_error, c.std_error);
  EXPECT_NE(a.value, contrastive_loss_mc(d, prior, f, 4, 30000, 43, 1).value);
}

TEST(ContrastiveMc, UnbiasedOverSeeds) {
  std::mt19937_64 rng(7);
  const auto d = make_data(rng, 3, 3);
  const auto prior = random_prior(rng, 3);
  const auto f = random_features(rng, d.size(), 2, 1.5);
  const double exact = contrastive_loss_exact(d, prior, f, 3).value;
  double mean = 0.0, var = 0.0;
  constexpr int seeds = 200;
  for (int s = 0; s < seeds; ++s) {
    const auto e = contrastive_loss_mc(d, prior, f, 3, 2000, static_cast<std::uint64_t>(s));
    mean += e.value / seeds;
    var += e.std_error * e.std_error / (seeds * seeds);
  }
  EXPECT_LE(std::abs(mean - exact), 4 * std::sqrt(var));
}

TEST(ContrastiveMc, LargeNegativeCountUsesScoreTable) {
  std::mt19937_64 rng(8);
  const auto d = make_data(rng, 4, 30);
  const auto prior = empirical_prior(d);
  const auto f = random_features(rng, d.size(), 5, 1.0);
  // Many tuples force the Gram path; few keep direct products.
  const auto tuples = sample_tuple_scores(d, prior, f, 50, 4000, 5);
  const auto big = contrastive_loss_mc(d, prior, f, 50, 4000, 5);
  EXPECT_NEAR(contrastive_loss_from_scores(tuples), big.value, 1e-12);
  const auto single = contrastive_loss_mc(d, prior, f, 50, 4000, 5, 1, true);
  EXPECT_NEAR(single.value, big.value, 1e-6);
  EXPECT_NE(single.value, big.value);
}

TEST(SampleTupleScores, SameSamplerAsEstimator) {
  std::mt19937_64 rng(9);
  const auto d = make_data(rng, 4, 5);
  const auto prior = random_prior(rng, 4);
  const auto f = random_features(rng, d.size(), 3, 1.0);
  const auto tuples = sample_tuple_scores(d, prior, f, 6, 3000, 11);
  ASSERT_EQ(tuples.size(), 3000u);
  for (const auto& t : tuples) ASSERT_EQ(t.size(), 7u);
  EXPECT_NEAR(contrastive_loss_from_scores(tuples), contrastive_loss_mc(d, prior, f, 6, 3000, 11).value, 1e-12);
}

TEST(SampleTupleScores, ZeroPriorClassesNeverSampled) {
  const LabeledDataset d({0.0, 1.0, 2.0}, 1, {0, 1, 2}, 3);
  const FeatureMap f({1.0, 0.0, -1.0}, 1, 1.0);
  const auto tuples = sample_tuple_scores(d, ClassPrior({0.5, 0.5, 0.0}), f, 3, 2000, 1);
  for (const auto& t : tuples) {
    for (double s : t) EXPECT_NE(s, -1.0);
  }
}

TEST(Sandwich, RandomTinyInstances) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 60; ++t) {
    const int c = 2 + t % 4;
    const int k = 1 + t % 3;
    const double l = 0.25 * (1 + t % 8);
    const auto d = make_data(rng, c, 3);
    const auto prior = t % 3 == 0 ? random_prior(rng, c) : ClassPrior::uniform(c);
    const auto f = random_features(rng, d.size(), 1 + t % 4, l);
    const BoundParams p(c, k, l, prior);
    for (double s : {1.0, 0.5, 0.1}) {
      const auto g = f.scaled(s);
      const double lc = contrastive_loss_exact(d, prior, g, k).value;
      const double ls = mean_supervised_loss(d, prior, g, build_mean_classifier(d, g));
      EXPECT_LE(ls - lc, delta_upper(p) + 1e-12) << t;
      EXPECT_GE(ls - lc, delta_lower(p) - 1e-12) << t;
      EXPECT_GE(ls, essential_sup(p) - 1e-12) << t;
      if (prior.is_uniform()) {
        EXPECT_GE(lc, essential_cont(p) - 1e-12) << t;
      }
    }
  }
}

TEST(CoarseGrain, IdentityAndAllToOne) {
  std::mt19937_64 rng(11);
  const auto d = make_data(rng, 3, 3);
  const std::vector<int> id{0, 1, 2};
  const auto same = coarse_grain(d, id);
  EXPECT_EQ(same.num_classes(), 3);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(same.label(i), d.label(i));

  const std::vector<int> one{0, 0, 0};
  const auto merged = coarse_grain(d, one);
  EXPECT_EQ(merged.num_classes(), 1);
  const auto f = random_features(rng, d.size(), 2, 1.0);
  const auto prior = coarse_prior(ClassPrior::uniform(3), one);
  EXPECT_EQ(prior.size(), 1);
  EXPECT_NEAR(mean_supervised_loss(merged, prior, f, build_mean_classifier(merged, f)), 0.0, 1e-15);
}

TEST(CoarseGrain, NonSurjectiveRejected) {
  std::mt19937_64 rng(12);
  const auto d = make_data(rng, 3, 2);
  const std::vector<int> gap{0, 2, 2};
  EXPECT_THROW(coarse_grain(d, gap), DomainError);
  const std::vector<int> short_map{0, 1};
  EXPECT_THROW(coarse_grain(d, short_map), DomainError);
}

TEST(CoarseGrain, UpperBoundWithLatentConstants) {
  std::mt19937_64 rng(13);
  const std::vector<int> pairs{0, 0, 1, 1};
  for (int t = 0; t < 30; ++t) {
    // Equal class counts keep the coarse prior equal to the empirical one.
    std::vector<double> pts;
    std::vector<int> labels;
    for (int c = 0; c < 4; ++c) {
      for (int i = 0; i < 2; ++i) {
        pts.push_back(c + 0.1 * i);
        labels.push_back(c);
      }
    }
    const LabeledDataset d(pts, 1, labels, 4);
    const double l = 0.5 + 0.25 * (t % 6);
    const int k = 1 + t % 3;
    const auto f = random_features(rng, d.size(), 2, l);
    const auto prior = ClassPrior::uniform(4);
    const double lc = contrastive_loss_exact(d, prior, f, k).value;
    const auto coarse = coarse_grain(d, pairs);
    const auto cp = coarse_prior(prior, pairs);
    const double ls = mean_supervised_loss(coarse, cp, f, build_mean_classifier(coarse, f));
    EXPECT_LE(ls, lc + delta_upper(BoundParams::uniform(4, k, l)) + 1e-12) << t;
  }
}

TEST(Subset, UpperBoundWithLatentConstants) {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 30; ++t) {
    const int c = 3 + t % 3;
    const auto d = make_data(rng, c, 3);
    const double l = 0.5 + 0.25 * (t % 6);
    const int k = 1 + t % 2;
    const auto prior = ClassPrior::uniform(c);
    const auto f = random_features(rng, d.size(), 2, l);
    const double lc = contrastive_loss_exact(d, prior, f, k).value;
    const std::vector<int> keep{c - 1, 0};
    const auto sub = restrict_to_classes(d, keep);
    const auto idx = restricted_indices(d, keep);
    const auto fs = select_rows(f, idx);
    const auto sp = restricted_prior(prior, keep);
    EXPECT_EQ(sub.num_classes(), 2);
    EXPECT_EQ(sub.size(), d.class_size(c - 1) + d.class_size(0));
    const double ls = mean_supervised_loss(sub, sp, fs, build_mean_classifier(sub, fs));
    EXPECT_LE(ls, lc + delta_upper(BoundParams::uniform(c, k, l)) + 1e-12) << t;
  }
}

TEST(LinearProbe, ZeroFeaturesPredictMajority) {
  const LabeledDataset d({0, 1, 2, 3, 4}, 1, {0, 1, 1, 1, 0}, 2);
  const auto z = FeatureMap::zeros(5, 2, 1.0);
  const auto r = linear_probe(d, z, d, z, ProbeOptions{50, 0.5, 1, true});
  EXPECT_DOUBLE_EQ(r.accuracy, 0.6);
}

TEST(LinearProbe, SeparatedMeans) {
  const LabeledDataset d({0, 1, 2, 3}, 1, {0, 0, 1, 1}, 2);
  const FeatureMap f({1, 0, 1, 0, -1, 0, -1, 0}, 2, 1.0);
  EXPECT_DOUBLE_EQ(linear_probe(d, f, d, f, ProbeOptions{20, 0.5, 1, true}).accuracy, 1.0);
  EXPECT_DOUBLE_EQ(linear_probe(d, f, d, f, ProbeOptions{200, 0.5, 1, false}).accuracy, 1.0);
}

TEST(LinearProbe, WarmStartMatchesMeanClassifierAndImproves) {
  std::mt19937_64 rng(15);
  const auto d = make_data(rng, 4, 6);
  const auto f = random_features(rng, d.size(), 3, 1.0);
  const double mean_loss = mean_supervised_loss(d, empirical_prior(d), f, build_mean_classifier(d, f));
  const auto zero = linear_probe(d, f, d, f, ProbeOptions{0, 0.5, 1, true});
  EXPECT_NEAR(zero.initial_train_loss, mean_loss, 1e-12);
  EXPECT_NEAR(zero.final_train_loss, mean_loss, 1e-12);
  const auto trained = linear_probe(d, f, d, f, ProbeOptions{300, 0.5, 1, true});
  EXPECT_LE(trained.final_train_loss, mean_loss + 1e-6);
}
