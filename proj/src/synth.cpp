#include "curl_lab/synth.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace curl {

// ------------------------------------------------------------------- data --

LabeledDataset gen_circle(int num_classes, int n_per_class, std::uint64_t seed) {
  if (num_classes < 1) throw DomainError("gen_circle needs at least one class");
  if (n_per_class < 1) throw DomainError("gen_circle needs n_per_class >= 1");
  std::vector<double> pts;
  std::vector<int> labels;
  pts.reserve(static_cast<std::size_t>(num_classes) * n_per_class * 2);
  for (int c = 0; c < num_classes; ++c) {
    Rng rng = make_substream(seed, static_cast<std::uint64_t>(c));
    const double radius = (c + 2) / 2.0;
    for (int i = 0; i < n_per_class; ++i) {
      double x = 0.0, y = 0.0, norm = 0.0;
      do {
        x = uniform01(rng) - 0.5;
        y = uniform01(rng) - 0.5;
        norm = std::hypot(x, y);
      } while (norm == 0.0);
      pts.push_back(radius * (x / norm));
      pts.push_back(radius * (y / norm));
      labels.push_back(c);
    }
  }
  return LabeledDataset(std::move(pts), 2, std::move(labels), num_classes);
}

namespace {

template <class T>
void fisher_yates(Rng& rng, std::vector<T>& v) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

LabeledDataset take_rows(const LabeledDataset& data, const std::vector<std::size_t>& idx) {
  std::vector<double> pts;
  std::vector<int> labels;
  pts.reserve(idx.size() * data.dim());
  for (std::size_t i : idx) {
    const auto p = data.point(i);
    pts.insert(pts.end(), p.begin(), p.end());
    labels.push_back(data.label(i));
  }
  return LabeledDataset(std::move(pts), data.dim(), std::move(labels), data.num_classes());
}

}  // namespace

SplitDatasets stratified_split(const LabeledDataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DomainError("train fraction must lie in (0, 1)");
  std::vector<std::size_t> train_idx, test_idx;
  for (int c = 0; c < data.num_classes(); ++c) {
    const auto members = data.members(c);
    const auto n = static_cast<long>(members.size());
    if (n < 2) throw DomainError("class " + std::to_string(c) + " needs two points to split");
    Rng rng = make_substream(seed, static_cast<std::uint64_t>(c));
    std::vector<std::size_t> order(members.begin(), members.end());
    fisher_yates(rng, order);
    const long n_train = std::clamp(std::lround(train_fraction * static_cast<double>(n)), 1L, n - 1);
    train_idx.insert(train_idx.end(), order.begin(), order.begin() + n_train);
    test_idx.insert(test_idx.end(), order.begin() + n_train, order.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  auto train = take_rows(data, train_idx);
  auto test = take_rows(data, test_idx);
  return SplitDatasets{std::move(train), std::move(test), std::move(train_idx), std::move(test_idx)};
}

std::vector<int> sample_batch_negatives(Rng& rng, int batch_pairs, int num_negatives) {
  const int b = batch_pairs;
  const int k = num_negatives;
  if (b < 1 || k < 1) throw DomainError("batch and negative counts must be positive");
  if (k > 2 * b - 2) throw DomainError("K exceeds the 2B - 2 other points of the minibatch");
  std::vector<int> out(static_cast<std::size_t>(2 * b) * k);
  std::vector<int> perm(static_cast<std::size_t>(b)), pos(static_cast<std::size_t>(b));
  std::iota(perm.begin(), perm.end(), 0);
  std::iota(pos.begin(), pos.end(), 0);
  auto swap_slots = [&](int i, int j) {
    std::swap(perm[i], perm[j]);
    pos[perm[i]] = i;
    pos[perm[j]] = j;
  };
  const int pair_draws = std::min(k, b - 1);
  std::vector<int> spare;
  for (int a = 0; a < 2 * b; ++a) {
    const int own = a % b;
    swap_slots(pos[own], b - 1);
    int* row = out.data() + static_cast<std::size_t>(a) * k;
    for (int t = 0; t < pair_draws; ++t) {
      const int j = t + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(b - 1 - t)));
      swap_slots(t, j);
      const int q = perm[t];
      row[t] = (rng() & 1U) ? q + b : q;
    }
    if (k > pair_draws) {
      spare.clear();
      for (int t = 0; t < pair_draws; ++t) spare.push_back(row[t] >= b ? row[t] - b : row[t] + b);
      for (int t = pair_draws; t < k; ++t) {
        const int j = t - pair_draws;
        const auto r = static_cast<std::size_t>(j) + uniform_index(rng, spare.size() - static_cast<std::size_t>(j));
        std::swap(spare[static_cast<std::size_t>(j)], spare[r]);
        row[t] = spare[static_cast<std::size_t>(j)];
      }
    }
  }
  return out;
}

// -------------------------------------------------------------------- MLP --

namespace {

template <class T>
struct Net {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Row = Eigen::Matrix<T, 1, Eigen::Dynamic>;
  using Col = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  std::vector<int> dims;
  std::vector<Mat> w;  // in x out
  std::vector<Row> b;

  struct Cache {
    std::vector<Mat> act;
    Col norm;
    Mat out;
  };

  std::size_t layers() const { return w.size(); }

  template <class U>
  Net<U> cast() const {
    Net<U> n;
    n.dims = dims;
    for (const auto& m : w) n.w.push_back(m.template cast<U>());
    for (const auto& v : b) n.b.push_back(v.template cast<U>());
    return n;
  }

  void forward(const Mat& x, Cache& cache) const {
    cache.act.resize(layers());
    cache.act[0] = x;
    Mat pre;
    for (std::size_t l = 0; l < layers(); ++l) {
      pre.noalias() = cache.act[l] * w[l];
      pre.rowwise() += b[l];
      if (l + 1 < layers()) cache.act[l + 1] = pre.cwiseMax(T(0));
    }
    cache.norm = pre.rowwise().norm();
    cache.out = std::move(pre);
    const T eps = static_cast<T>(ContrastiveMlp::kNormEpsilon);
    for (Eigen::Index i = 0; i < cache.out.rows(); ++i) cache.out.row(i) /= std::max(cache.norm(i), eps);
  }

  void backward(const Cache& cache, const Mat& dout, std::vector<Mat>& gw, std::vector<Row>& gb) const {
    gw.resize(layers());
    gb.resize(layers());
    const T eps = static_cast<T>(ContrastiveMlp::kNormEpsilon);
    Mat d(dout.rows(), dout.cols());
    for (Eigen::Index i = 0; i < dout.rows(); ++i) {
      const T n = cache.norm(i);
      if (n > eps) {
        const auto y = cache.out.row(i);
        d.row(i) = (dout.row(i) - y * y.dot(dout.row(i))) / n;
      } else {
        d.row(i) = dout.row(i) / eps;
      }
    }
    for (std::size_t l = layers(); l-- > 0;) {
      gw[l].noalias() = cache.act[l].transpose() * d;
      gb[l] = d.colwise().sum();
      if (l > 0) {
        Mat prev;
        prev.noalias() = d * w[l].transpose();
        d = prev.cwiseProduct((cache.act[l].array() > T(0)).template cast<T>().matrix());
      }
    }
  }
};

Net<double> init_net(const std::vector<int>& dims, std::uint64_t seed, double init_scale) {
  if (dims.size() < 2) throw DomainError("network needs at least an input and an output width");
  for (int d : dims) {
    if (d < 1) throw DomainError("layer widths must be positive");
  }
  Net<double> net;
  net.dims = dims;
  Rng rng = make_substream(seed, 0);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    Net<double>::Mat w(dims[l], dims[l + 1]);
    Net<double>::Row b(dims[l + 1]);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = init_scale * bound * (2.0 * uniform01(rng) - 1.0);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = bound * (2.0 * uniform01(rng) - 1.0);
    net.w.push_back(std::move(w));
    net.b.push_back(std::move(b));
  }
  return net;
}

// out[i] = <x, rows[i]>. Four rows share each load of x.
template <class T>
void gather_dots(const T* x, const T* base, Eigen::Index ld, const int* rows, int count, Eigen::Index h, double* out) {
  constexpr int P = 64 / sizeof(T);
  using Pk = Eigen::Array<T, P, 1>;
  int e = 0;
  if (h % P == 0) {
    for (; e + 4 <= count; e += 4) {
      const T* r0 = base + rows[e] * ld;
      const T* r1 = base + rows[e + 1] * ld;
      const T* r2 = base + rows[e + 2] * ld;
      const T* r3 = base + rows[e + 3] * ld;
      Pk a0 = Pk::Zero(), a1 = Pk::Zero(), a2 = Pk::Zero(), a3 = Pk::Zero();
      for (Eigen::Index i = 0; i < h; i += P) {
        const Pk v = Eigen::Map<const Pk>(x + i);
        a0 += v * Eigen::Map<const Pk>(r0 + i);
        a1 += v * Eigen::Map<const Pk>(r1 + i);
        a2 += v * Eigen::Map<const Pk>(r2 + i);
        a3 += v * Eigen::Map<const Pk>(r3 + i);
      }
      out[e] = static_cast<double>(a0.sum());
      out[e + 1] = static_cast<double>(a1.sum());
      out[e + 2] = static_cast<double>(a2.sum());
      out[e + 3] = static_cast<double>(a3.sum());
    }
  }
  using V = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
  for (; e < count; ++e) out[e] = static_cast<double>(V(x, h).dot(V(base + rows[e] * ld, h)));
}

// out += sum_i g[i] * rows[i], accumulated in registers 8 packets at a time.
template <class T>
void gather_axpy(T* out, const T* base, Eigen::Index ld, const int* rows, const T* g, int count, Eigen::Index h) {
  constexpr int P = 64 / sizeof(T);
  constexpr int W = 8 * P;
  using Pk = Eigen::Array<T, P, 1>;
  Eigen::Index c0 = 0;
  for (; c0 + W <= h; c0 += W) {
    Pk acc[8];
    for (Pk& a : acc) a.setZero();
    for (int e = 0; e < count; ++e) {
      const T* r = base + rows[e] * ld + c0;
      const T w = g[e];
      for (int q = 0; q < 8; ++q) acc[q] += w * Eigen::Map<const Pk>(r + q * P);
    }
    for (int q = 0; q < 8; ++q) Eigen::Map<Pk>(out + c0 + q * P) += acc[q];
  }
  if (c0 == h) return;
  for (int e = 0; e < count; ++e) {
    const T* r = base + rows[e] * ld;
    for (Eigen::Index i = c0; i < h; ++i) out[i] += g[e] * r[i];
  }
}

// Symmetric minibatch loss over the 2B anchors; fills dz when given.
template <class T>
double pair_loss(const typename Net<T>::Mat& z, int b, std::span<const int> negatives, int k,
                 typename Net<T>::Mat* dz) {
  const int n = 2 * b;
  if (negatives.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(k)) {
    throw DomainError("negative index table has the wrong size");
  }
  if (dz) dz->setZero(z.rows(), z.cols());
  const double inv = 1.0 / n;
  const std::size_t width = static_cast<std::size_t>(k) + 1;
  const Eigen::Index h = z.cols();
  const T* base = z.data();
  std::vector<double> s(width);
  std::vector<int> idx(n * width);
  std::vector<T> weight(dz ? n * width : 0);
  // Wide tuples: one GEMM with the symmetrized weights beats row gathers.
  const bool dense = dz && width * 9 > static_cast<std::size_t>(n);
  typename Net<T>::Mat sym;
  if (dense) sym.setZero(n, n);
  double total = 0.0;
  for (int a = 0; a < n; ++a) {
    int* row_idx = idx.data() + static_cast<std::size_t>(a) * width;
    row_idx[0] = a < b ? a + b : a - b;
    for (int j = 0; j < k; ++j) row_idx[j + 1] = negatives[static_cast<std::size_t>(a) * k + j];
    gather_dots(base + a * h, base, h, row_idx, static_cast<int>(width), h, s.data());
    const double lse = log_sum_exp(s);
    total += lse - s[0];
    if (!dz) continue;
    T* w = weight.data() + static_cast<std::size_t>(a) * width;
    for (std::size_t j = 0; j < width; ++j) w[j] = static_cast<T>((std::exp(s[j] - lse) - (j == 0 ? 1.0 : 0.0)) * inv);
    if (dense) {
      for (std::size_t j = 0; j < width; ++j) {
        sym(a, row_idx[j]) += w[j];
        sym(row_idx[j], a) += w[j];
      }
      continue;
    }
    gather_axpy(dz->data() + a * h, base, h, row_idx, w, static_cast<int>(width), h);
  }
  if (!dz) return total * inv;
  if (dense) {
    dz->noalias() = sym * z;
    return total * inv;
  }

  // Transposed terms, grouped by the row they land on.
  std::vector<int> start(static_cast<std::size_t>(n) + 1, 0);
  for (int t : idx) ++start[static_cast<std::size_t>(t) + 1];
  std::partial_sum(start.begin(), start.end(), start.begin());
  std::vector<int> fill(start.begin(), start.end() - 1);
  std::vector<int> source(idx.size());
  std::vector<T> g_sorted(idx.size());
  for (std::size_t e = 0; e < idx.size(); ++e) {
    const int p = fill[static_cast<std::size_t>(idx[e])]++;
    source[static_cast<std::size_t>(p)] = static_cast<int>(e / width);
    g_sorted[static_cast<std::size_t>(p)] = weight[e];
  }
  for (int t = 0; t < n; ++t) {
    const int p0 = start[static_cast<std::size_t>(t)];
    gather_axpy(dz->data() + t * h, base, h, source.data() + p0, g_sorted.data() + p0,
                start[static_cast<std::size_t>(t) + 1] - p0, h);
  }
  return total * inv;
}

template <class T>
typename Net<T>::Mat stack_pairs(std::span<const double> anchors, std::span<const double> positives, int b,
                                 int d) {
  typename Net<T>::Mat x(2 * b, d);
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < d; ++j) {
      x(i, j) = static_cast<T>(anchors[static_cast<std::size_t>(i) * d + j]);
      x(b + i, j) = static_cast<T>(positives[static_cast<std::size_t>(i) * d + j]);
    }
  }
  return x;
}

// Features from the float network, renormalized in double.
FeatureMap float_features(const Net<float>& net, const LabeledDataset& data) {
  const auto pts = data.raw_points();
  const auto d = static_cast<Eigen::Index>(net.dims.front());
  Net<float>::Mat x = Eigen::Map<const Net<double>::Mat>(pts.data(), static_cast<Eigen::Index>(data.size()), d)
                          .cast<float>();
  Net<float>::Cache cache;
  net.forward(x, cache);
  Net<double>::Mat out = cache.out.cast<double>();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.5) out.row(i) /= n;
  }
  return FeatureMap(std::vector<double>(out.data(), out.data() + out.size()), static_cast<std::size_t>(out.cols()),
                    1.0);
}

}  // namespace

struct ContrastiveMlp::Impl {
  Net<double> net;
};

ContrastiveMlp::ContrastiveMlp(std::vector<int> dims, std::uint64_t seed, double init_scale)
    : impl_(std::make_unique<Impl>(Impl{init_net(dims, seed, init_scale)})) {}
ContrastiveMlp::~ContrastiveMlp() = default;
ContrastiveMlp::ContrastiveMlp(const ContrastiveMlp& other) : impl_(std::make_unique<Impl>(*other.impl_)) {}
ContrastiveMlp& ContrastiveMlp::operator=(const ContrastiveMlp& other) {
  if (this != &other) impl_ = std::make_unique<Impl>(*other.impl_);
  return *this;
}
ContrastiveMlp::ContrastiveMlp(ContrastiveMlp&&) noexcept = default;
ContrastiveMlp& ContrastiveMlp::operator=(ContrastiveMlp&&) noexcept = default;

const std::vector<int>& ContrastiveMlp::dims() const noexcept { return impl_->net.dims; }

std::size_t ContrastiveMlp::num_parameters() const noexcept {
  std::size_t n = 0;
  for (std::size_t l = 0; l < impl_->net.layers(); ++l) {
    n += static_cast<std::size_t>(impl_->net.w[l].size() + impl_->net.b[l].size());
  }
  return n;
}

namespace {

template <class T>
void flatten(const std::vector<typename Net<T>::Mat>& w, const std::vector<typename Net<T>::Row>& b,
             std::vector<double>& out) {
  out.clear();
  for (std::size_t l = 0; l < w.size(); ++l) {
    out.insert(out.end(), w[l].data(), w[l].data() + w[l].size());
    out.insert(out.end(), b[l].data(), b[l].data() + b[l].size());
  }
}

}  // namespace

std::vector<double> ContrastiveMlp::parameters() const {
  std::vector<double> out;
  flatten<double>(impl_->net.w, impl_->net.b, out);
  return out;
}

void ContrastiveMlp::set_parameters(std::span<const double> params) {
  if (params.size() != num_parameters()) throw DomainError("parameter vector has the wrong length");
  std::size_t at = 0;
  for (std::size_t l = 0; l < impl_->net.layers(); ++l) {
    auto& w = impl_->net.w[l];
    auto& b = impl_->net.b[l];
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(at), w.size(), w.data());
    at += static_cast<std::size_t>(w.size());
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(at), b.size(), b.data());
    at += static_cast<std::size_t>(b.size());
  }
}

void ContrastiveMlp::zero_biases() {
  for (auto& b : impl_->net.b) b.setZero();
}

void ContrastiveMlp::set_zero() {
  for (auto& w : impl_->net.w) w.setZero();
  zero_biases();
}

std::vector<double> ContrastiveMlp::embed(std::span<const double> points, std::size_t n) const {
  const int d = impl_->net.dims.front();
  if (points.size() != n * static_cast<std::size_t>(d)) throw DomainError("input has the wrong shape");
  const Eigen::Map<const Net<double>::Mat> x(points.data(), static_cast<Eigen::Index>(n), d);
  Net<double>::Cache cache;
  impl_->net.forward(x, cache);
  return std::vector<double>(cache.out.data(), cache.out.data() + cache.out.size());
}

FeatureMap ContrastiveMlp::features(const LabeledDataset& data) const {
  return FeatureMap(embed(data.raw_points(), data.size()), static_cast<std::size_t>(impl_->net.dims.back()), 1.0);
}

double ContrastiveMlp::minibatch_loss(std::span<const double> anchors, std::span<const double> positives,
                                      int batch_pairs, std::span<const int> negatives, int num_negatives,
                                      std::vector<double>* grad) const {
  const int d = impl_->net.dims.front();
  if (anchors.size() != static_cast<std::size_t>(batch_pairs) * d || positives.size() != anchors.size()) {
    throw DomainError("pair arrays have the wrong shape");
  }
  const auto x = stack_pairs<double>(anchors, positives, batch_pairs, d);
  Net<double>::Cache cache;
  impl_->net.forward(x, cache);
  Net<double>::Mat dz;
  const double loss = pair_loss<double>(cache.out, batch_pairs, negatives, num_negatives, grad ? &dz : nullptr);
  if (grad) {
    std::vector<Net<double>::Mat> gw;
    std::vector<Net<double>::Row> gb;
    impl_->net.backward(cache, dz, gw, gb);
    flatten<double>(gw, gb, *grad);
  }
  return loss;
}

double mlp_gradient_check(std::uint64_t seed) {
  constexpr int kPairs = 3;
  constexpr int kNegatives = 2;
  constexpr double kStep = 1e-5;
  constexpr double kFloor = 1e-4;
  ContrastiveMlp net({2, 5, 5, 4}, seed, 1.0);
  Rng rng = make_substream(seed, 1);
  std::vector<double> anchors(kPairs * 2), positives(kPairs * 2);
  for (double& v : anchors) v = 2.0 * uniform01(rng) - 1.0;
  for (double& v : positives) v = 2.0 * uniform01(rng) - 1.0;
  const auto negatives = sample_batch_negatives(rng, kPairs, kNegatives);

  std::vector<double> grad;
  net.minibatch_loss(anchors, positives, kPairs, negatives, kNegatives, &grad);
  auto params = net.parameters();
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + kStep;
    net.set_parameters(params);
    const double up = net.minibatch_loss(anchors, positives, kPairs, negatives, kNegatives, nullptr);
    params[i] = saved - kStep;
    net.set_parameters(params);
    const double down = net.minibatch_loss(anchors, positives, kPairs, negatives, kNegatives, nullptr);
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * kStep);
    const double denom = std::max({std::abs(grad[i]), std::abs(numeric), kFloor});
    worst = std::max(worst, std::abs(grad[i] - numeric) / denom);
  }
  net.set_parameters(params);
  return worst;
}

// --------------------------------------------------------------- training --

void TrainConfig::validate() const {
  if (num_classes < 1 || n_per_class < 2) throw DomainError("need >= 1 class and >= 2 points per class");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DomainError("train fraction must lie in (0, 1)");
  if (num_negatives < 1) throw DomainError("K must be >= 1");
  if (batch_size < 2) throw DomainError("batch size must be >= 2");
  if (num_negatives > 2 * batch_size - 2) {
    throw DomainError("K = " + std::to_string(num_negatives) + " exceeds 2B - 2 = " +
                      std::to_string(2 * batch_size - 2));
  }
  if (epochs < 1) throw DomainError("epochs must be >= 1");
  if (!(learning_rate > 0.0) || !(weight_decay >= 0.0)) throw DomainError("invalid optimizer settings");
  if (lr_patience < 0 || !(lr_factor > 0.0 && lr_factor < 1.0)) throw DomainError("invalid scheduler settings");
  if (!(init_scale > 0.0)) throw DomainError("init scale must be positive");
  if (eval_samples_per_point < 1) throw DomainError("evaluation sample count must be positive");
}

namespace {

enum StreamTag : std::uint64_t { kDataTag = 1, kSplitTag, kInitTag, kPairTag, kTrainTag, kEvalTag };

std::uint64_t derive_seed(std::uint64_t seed, StreamTag tag) { return mix64(seed ^ mix64(tag)); }

template <class T>
struct AdamW {
  using Mat = typename Net<T>::Mat;
  using Row = typename Net<T>::Row;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  std::vector<Mat> mw, vw;
  std::vector<Row> mb, vb;

  explicit AdamW(const Net<T>& net) {
    for (std::size_t l = 0; l < net.layers(); ++l) {
      mw.push_back(Mat::Zero(net.w[l].rows(), net.w[l].cols()));
      vw.push_back(Mat::Zero(net.w[l].rows(), net.w[l].cols()));
      mb.push_back(Row::Zero(net.b[l].size()));
      vb.push_back(Row::Zero(net.b[l].size()));
    }
  }

  template <class P, class G, class M>
  void update(P& p, const G& g, M& m, M& v, T lr, T wd, T bc1, T bc2_sqrt) {
    m = T(beta1) * m + T(1 - beta1) * g;
    v = T(beta2) * v + T(1 - beta2) * g.cwiseProduct(g);
    p *= T(1) - lr * wd;
    const auto denom = (v.array().sqrt() / bc2_sqrt + T(eps));
    p.array() -= (lr / bc1) * m.array() / denom;
  }

  void apply(Net<T>& net, const std::vector<Mat>& gw, const std::vector<Row>& gb, double lr, double wd) {
    ++step;
    const T bc1 = static_cast<T>(1.0 - std::pow(beta1, static_cast<double>(step)));
    const T bc2_sqrt = static_cast<T>(std::sqrt(1.0 - std::pow(beta2, static_cast<double>(step))));
    for (std::size_t l = 0; l < net.layers(); ++l) {
      update(net.w[l], gw[l], mw[l], vw[l], static_cast<T>(lr), static_cast<T>(wd), bc1, bc2_sqrt);
      update(net.b[l], gb[l], mb[l], vb[l], static_cast<T>(lr), static_cast<T>(wd), bc1, bc2_sqrt);
    }
  }
};

}  // namespace

TrainOutcome train_contrastive_full(const TrainConfig& cfg,
                                    const std::function<void(const TrajectoryRecord&)>& on_record) {
  cfg.validate();
  const std::vector<int> dims{2, 256, 256, 256};
  auto data = gen_circle(cfg.num_classes, cfg.n_per_class, derive_seed(cfg.seed, kDataTag));
  auto split = stratified_split(data, cfg.train_fraction, derive_seed(cfg.seed, kSplitTag));
  const auto& train = split.train;
  const auto& test = split.test;
  const int k = cfg.num_negatives;

  // Positive partner per training point, fixed for the run.
  std::vector<std::size_t> partner(train.size());
  {
    Rng rng = make_substream(derive_seed(cfg.seed, kPairTag), 0);
    for (int c = 0; c < train.num_classes(); ++c) {
      const auto members = train.members(c);
      if (members.size() < 2) throw DomainError("every training class needs two points to form pairs");
      for (std::size_t i = 0; i < members.size(); ++i) {
        std::size_t r = uniform_index(rng, members.size() - 1);
        if (r >= i) ++r;
        partner[members[i]] = members[r];
      }
    }
  }
  const auto num_pairs = static_cast<int>(train.size());
  const int num_batches = (num_pairs + cfg.batch_size - 1) / cfg.batch_size;
  const int smallest_batch = num_pairs / num_batches;
  if (k > 2 * smallest_batch - 2) {
    throw DomainError("K = " + std::to_string(k) + " exceeds 2B - 2 for the smallest minibatch of " +
                      std::to_string(smallest_batch) + " pairs");
  }

  ContrastiveMlp model(dims, derive_seed(cfg.seed, kInitTag), cfg.init_scale);
  Net<float> net = init_net(dims, derive_seed(cfg.seed, kInitTag), cfg.init_scale).cast<float>();
  AdamW<float> adam(net);

  const ClassPrior test_prior = empirical_prior(test);
  const auto eval_seed = derive_seed(cfg.seed, kEvalTag);
  const auto eval_samples = static_cast<std::int64_t>(cfg.eval_samples_per_point) * static_cast<std::int64_t>(test.size());

  auto sync_model = [&] {
    std::vector<double> flat;
    flatten<float>(net.w, net.b, flat);
    model.set_parameters(flat);
  };

  auto evaluate = [&](int epoch, double lr, double train_loss) {
    const FeatureMap f_train = float_features(net, train);
    const FeatureMap f_test = float_features(net, test);
    const MeanClassifier mc = build_mean_classifier(train, f_train);
    TrajectoryRecord rec;
    rec.epoch = epoch;
    rec.l_sup = mean_supervised_loss(test, test_prior, f_test, mc);
    rec.accuracy = mean_classifier_accuracy(test, f_test, mc);
    rec.l_cont = contrastive_loss_mc(test, test_prior, f_test, k, eval_samples, eval_seed, resolve_threads(cfg.threads),
                                     true);
    rec.lr = lr;
    rec.train_loss = train_loss;
    return rec;
  };

  TrainOutcome outcome{{}, model, split};
  double lr = cfg.learning_rate;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  double last_train_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> order(static_cast<std::size_t>(num_pairs));
  std::iota(order.begin(), order.end(), 0);
  Net<float>::Cache cache;
  Net<float>::Mat x, dz;
  std::vector<Net<float>::Mat> gw;
  std::vector<Net<float>::Row> gb;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto rec = evaluate(epoch, lr, last_train_loss);
    outcome.records.push_back(rec);
    if (on_record) on_record(rec);
    if (epoch + 1 == cfg.epochs) break;

    Rng rng = make_substream(derive_seed(cfg.seed, kTrainTag), static_cast<std::uint64_t>(epoch));
    fisher_yates(rng, order);
    double epoch_loss = 0.0;
    int start = 0;
    for (int batch = 0; batch < num_batches; ++batch) {
      const int size = num_pairs / num_batches + (batch < num_pairs % num_batches ? 1 : 0);
      x.resize(2 * size, 2);
      for (int i = 0; i < size; ++i) {
        const auto a = static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)]);
        const auto pa = train.point(a);
        const auto pp = train.point(partner[a]);
        x(i, 0) = static_cast<float>(pa[0]);
        x(i, 1) = static_cast<float>(pa[1]);
        x(size + i, 0) = static_cast<float>(pp[0]);
        x(size + i, 1) = static_cast<float>(pp[1]);
      }
      start += size;
      const auto negatives = sample_batch_negatives(rng, size, k);
      net.forward(x, cache);
      const double loss = pair_loss<float>(cache.out, size, negatives, k, &dz);
      net.backward(cache, dz, gw, gb);
      adam.apply(net, gw, gb, lr, cfg.weight_decay);
      epoch_loss += loss * size;
    }
    epoch_loss /= num_pairs;
    last_train_loss = epoch_loss;

    // Plateau schedule on the training loss, relative threshold 1e-4.
    if (epoch_loss < best * (1.0 - 1e-4)) {
      best = epoch_loss;
      bad_epochs = 0;
    } else if (++bad_epochs > cfg.lr_patience) {
      lr *= cfg.lr_factor;
      bad_epochs = 0;
    }
  }
  sync_model();
  outcome.model = model;
  return outcome;
}

std::vector<TrajectoryRecord> train_contrastive(const TrainConfig& cfg) {
  return train_contrastive_full(cfg).records;
}

}  // namespace curl
