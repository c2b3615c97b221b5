#include "curl_lab/verify.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "curl_lab/format.hpp"
#include "curl_lab/losses.hpp"
#include "curl_lab/parallel.hpp"

namespace curl {

// ----------------------------------------------------------------- report --

void VerificationReport::record(double margin, double tolerance) {
  ++trials;
  worst_margin = std::min(worst_margin, margin);
  if (!(margin >= -tolerance)) {
    ++failures;
    if (notes.size() < 8) notes.push_back("margin " + format_double(margin));
  }
}

void VerificationReport::fail(std::string note) {
  ++trials;
  ++failures;
  if (notes.size() < 8) notes.push_back(std::move(note));
}

void VerificationReport::merge(const VerificationReport& other) {
  trials += other.trials;
  failures += other.failures;
  worst_margin = std::min(worst_margin, other.worst_margin);
  for (const auto& n : other.notes) {
    if (notes.size() < 8) notes.push_back(n);
  }
}

std::string VerificationReport::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["trials"] = trials;
  j["failures"] = failures;
  j["passed"] = passed();
  j["worst_margin"] = std::isfinite(worst_margin) ? nlohmann::ordered_json(worst_margin) : nlohmann::ordered_json();
  auto& p = j["params"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : params) p[k] = v;
  j["notes"] = notes;
  return j.dump(2);
}

namespace {

std::string join_doubles(const std::vector<double>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ';';
    s += format_double(xs[i]);
  }
  return s;
}

constexpr std::int64_t kTrialChunk = 4096;

// (cell, chunk) work items; each gets its own substream.
struct Task {
  std::size_t cell;
  std::int64_t begin;
  std::int64_t end;
};

std::vector<Task> make_tasks(std::size_t cells, std::int64_t trials) {
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::int64_t b = 0; b < trials; b += kTrialChunk) tasks.push_back({c, b, std::min(trials, b + kTrialChunk)});
  }
  return tasks;
}

struct Partial {
  VerificationReport report;
  double max_value = -std::numeric_limits<double>::infinity();
};

double two_sided_lse(std::span<const double> z, std::vector<double>& scratch) {
  scratch.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) scratch[i] = -z[i];
  return log_sum_exp(z) + log_sum_exp(scratch);
}

// LSE(z) + LSE(-z) at a vertex with j entries at +a and n - j at -a.
double vertex_value(int n, int j, double a) {
  const double q = std::exp(-2.0 * a);
  return 2.0 * a + std::log(j + (n - j) * q) + std::log((n - j) + j * q);
}

double vertex_count_max(int n, double a) {
  double best = -std::numeric_limits<double>::infinity();
  for (int j = 0; j <= n; ++j) best = std::max(best, vertex_value(n, j, a));
  return best;
}

void check_lengths(int n, const std::vector<double>& l_set, std::int64_t trials) {
  if (n < 1) throw DomainError("size bound must be >= 1");
  if (trials < 1) throw DomainError("trials must be >= 1");
  if (l_set.empty()) throw DomainError("need at least one norm bound");
  for (double l : l_set) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw DomainError("norm bounds must be finite and >= 0");
  }
}

}  // namespace

std::pair<double, int> vertex_sweep_max(int n, double norm_bound) {
  if (n < 1 || n > 20) throw DomainError("vertex sweep supports 1 <= N <= 20");
  const double a = norm_bound * norm_bound;
  std::vector<double> z(static_cast<std::size_t>(n)), scratch;
  double best = -std::numeric_limits<double>::infinity();
  int best_count = 0;
  for (std::uint32_t mask = 0; mask < (1U << n); ++mask) {
    for (int i = 0; i < n; ++i) z[static_cast<std::size_t>(i)] = (mask >> i) & 1U ? a : -a;
    const double v = two_sided_lse(z, scratch);
    if (v > best) {
      best = v;
      best_count = std::popcount(mask);
    }
  }
  return {best, best_count};
}

// ------------------------------------------------------------- lemma: LSE --

VerificationReport check_lemma_lse(int n_max, const std::vector<double>& l_set, std::int64_t trials,
                                   std::uint64_t seed, int threads) {
  check_lengths(n_max, l_set, trials);
  const std::size_t cells = static_cast<std::size_t>(n_max) * l_set.size();
  const auto tasks = make_tasks(cells, trials);
  std::vector<Partial> partial(tasks.size());

  parallel_for_chunks(tasks.size(), threads, [&](std::size_t t) {
    const Task& task = tasks[t];
    const int n = static_cast<int>(task.cell / l_set.size()) + 1;
    const double l = l_set[task.cell % l_set.size()];
    const double a = l * l;
    const double lower = 2.0 * std::log(static_cast<double>(n));
    const double upper = 2.0 * (std::log(static_cast<double>(n)) + log_cosh(a));
    Rng rng = make_substream(seed, t);
    std::vector<double> z(static_cast<std::size_t>(n)), scratch;
    Partial& out = partial[t];
    for (std::int64_t i = task.begin; i < task.end; ++i) {
      for (double& v : z) v = a * (2.0 * uniform01(rng) - 1.0);
      const double value = two_sided_lse(z, scratch);
      out.report.record(std::min(value - lower, upper - value));
      out.max_value = std::max(out.max_value, value);
    }
  });

  VerificationReport report;
  report.name = "lemma_lse";
  report.params = {{"N_max", std::to_string(n_max)},
                   {"L_set", join_doubles(l_set)},
                   {"trials_per_cell", std::to_string(trials)},
                   {"seed", std::to_string(seed)}};
  std::vector<double> cell_max(cells, -std::numeric_limits<double>::infinity());
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    report.merge(partial[t].report);
    cell_max[tasks[t].cell] = std::max(cell_max[tasks[t].cell], partial[t].max_value);
  }

  std::vector<double> z, scratch;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const int n = static_cast<int>(cell / l_set.size()) + 1;
    const double l = l_set[cell % l_set.size()];
    const double a = l * l;
    const double lower = 2.0 * std::log(static_cast<double>(n));
    const double upper = 2.0 * (std::log(static_cast<double>(n)) + log_cosh(a));
    const std::string where = "N=" + std::to_string(n) + " L=" + format_double(l);

    z.assign(static_cast<std::size_t>(n), 0.0);
    const double at_zero = two_sided_lse(z, scratch);
    if (std::abs(at_zero - lower) > kVerifyTolerance) report.fail(where + ": z=0 misses the lower bound");
    else ++report.trials;

    if (n % 2 == 0) {
      for (int i = 0; i < n; ++i) z[static_cast<std::size_t>(i)] = i < n / 2 ? a : -a;
      const double at_vertex = two_sided_lse(z, scratch);
      if (std::abs(at_vertex - upper) > kVerifyTolerance) report.fail(where + ": half/half vertex misses the upper bound");
      else ++report.trials;
    }

    const double vmax = vertex_count_max(n, a);
    report.record(upper - vmax);
    if (cell_max[cell] > vmax + kVerifyTolerance) report.fail(where + ": random trial exceeds the vertex maximum");
    else ++report.trials;
  }
  return report;
}

// ---------------------------------------------------------- lemma: offset --

VerificationReport check_lemma_offset(int k_max, const std::vector<double>& l_set, std::int64_t trials,
                                      std::uint64_t seed, int threads) {
  check_lengths(k_max, l_set, trials);
  const std::size_t cells = static_cast<std::size_t>(k_max) * l_set.size();
  const auto tasks = make_tasks(cells, trials);
  std::vector<Partial> partial(tasks.size());

  parallel_for_chunks(tasks.size(), threads, [&](std::size_t t) {
    const Task& task = tasks[t];
    const int k = static_cast<int>(task.cell / l_set.size()) + 1;
    const double l = l_set[task.cell % l_set.size()];
    const double a = l * l;
    const double offset = 2.0 * (std::log(k + 1.0) + log_cosh(a));
    Rng rng = make_substream(seed ^ 0x6f66667365745fULL, t);
    std::vector<double> z(static_cast<std::size_t>(k) + 1), neg(z.size());
    Partial& out = partial[t];
    for (std::int64_t i = task.begin; i < task.end; ++i) {
      for (double& v : z) v = a * (2.0 * uniform01(rng) - 1.0);
      for (std::size_t j = 0; j < z.size(); ++j) neg[j] = -z[j];
      const double lhs = neg[0] - log_sum_exp(neg);
      const double rhs = -(z[0] - log_sum_exp(z)) - offset;
      out.report.record(lhs - rhs);
      out.max_value = std::max(out.max_value, log_sum_exp(z) + log_sum_exp(neg));
    }
  });

  VerificationReport report;
  report.name = "lemma_offset";
  report.params = {{"K_max", std::to_string(k_max)},
                   {"L_set", join_doubles(l_set)},
                   {"trials_per_cell", std::to_string(trials)},
                   {"seed", std::to_string(seed)}};
  std::vector<double> cell_max(cells, -std::numeric_limits<double>::infinity());
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    report.merge(partial[t].report);
    cell_max[tasks[t].cell] = std::max(cell_max[tasks[t].cell], partial[t].max_value);
  }

  constexpr int kSweepMax = 12;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const int k = static_cast<int>(cell / l_set.size()) + 1;
    const int n = k + 1;
    const double l = l_set[cell % l_set.size()];
    const double a = l * l;
    const double bound = 2.0 * (std::log(static_cast<double>(n)) + log_cosh(a));
    const std::string where = "K=" + std::to_string(k) + " L=" + format_double(l);

    double vmax = vertex_count_max(n, a);
    if (k <= kSweepMax) {
      const auto [sweep_max, count] = vertex_sweep_max(n, l);
      vmax = sweep_max;
      report.record(bound - sweep_max);
      const double at_ceil = vertex_value(n, (n + 1) / 2, a);
      if (std::abs(at_ceil - sweep_max) > 1e-12 * std::max(1.0, std::abs(sweep_max))) {
        report.fail(where + ": ceil((K+1)/2) positives do not attain the vertex maximum (argmax had " +
                    std::to_string(count) + ")");
      } else {
        ++report.trials;
      }
      if (n % 2 == 0 && std::abs(sweep_max - bound) > kVerifyTolerance) {
        report.fail(where + ": vertex maximum misses the bound");
      } else {
        ++report.trials;
      }
    } else {
      report.record(bound - vmax);
    }
    if (cell_max[cell] > vmax + kVerifyTolerance) report.fail(where + ": random trial exceeds the vertex maximum");
    else ++report.trials;
  }
  return report;
}

// --------------------------------------------------------------- sandwich --

namespace {

struct Instance {
  LabeledDataset data;
  ClassPrior prior;
  FeatureMap features;
  int num_negatives;
  double norm_bound;
};

void random_direction(Rng& rng, std::span<double> out) {
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& v : out) {
      v = 2.0 * uniform01(rng) - 1.0;
      norm += v * v;
    }
  } while (norm < 1e-6 || norm > 1.0);
  norm = std::sqrt(norm);
  for (double& v : out) v /= norm;
}

Instance make_instance(std::uint64_t seed, std::size_t index, int c_max, int k_max) {
  Rng rng = make_substream(seed, index);
  const int classes = 2 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(c_max - 1)));
  const auto h = 1 + uniform_index(rng, 4);
  std::vector<int> counts(static_cast<std::size_t>(classes));
  for (int& n : counts) n = 1 + static_cast<int>(uniform_index(rng, 5));
  const int n_max = *std::max_element(counts.begin(), counts.end());

  double l = 0.0;
  constexpr double kGrid[] = {0.0, 0.3, 0.5, 1.0, 1.5, 2.0};
  if (uniform01(rng) < 0.3) l = kGrid[uniform_index(rng, 6)];
  else l = 2.0 * uniform01(rng);

  int k_feasible = 0;
  for (int k = 1; k <= k_max; ++k) {
    if (std::pow(classes, k + 1) * std::pow(n_max, k + 2) <= kDefaultExactBudget) k_feasible = k;
  }
  const int k = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(std::max(k_feasible, 1))));

  std::vector<double> pts;
  std::vector<int> labels;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) {
      pts.push_back(static_cast<double>(labels.size()));
      labels.push_back(c);
    }
  }
  LabeledDataset data(std::move(pts), 1, std::move(labels), classes);

  std::vector<double> probs(static_cast<std::size_t>(classes), 1.0 / classes);
  if ((index / 6) % 2 == 1) {
    double total = 0.0;
    for (double& p : probs) total += (p = std::exp(-3.0 * uniform01(rng)));
    for (double& p : probs) p /= total;
  }
  ClassPrior prior(std::move(probs));

  std::vector<double> table(data.size() * h, 0.0);
  std::vector<double> centers(static_cast<std::size_t>(classes) * h);
  for (int c = 0; c < classes; ++c) random_direction(rng, std::span<double>(centers.data() + c * h, h));
  const double scale = 1e-3 + (1.0 - 1e-3) * uniform01(rng);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::span<double> row(table.data() + i * h, h);
    const int c = data.label(i);
    switch (index % 6) {
      case 0:  // inside the ball
        random_direction(rng, row);
        for (double& v : row) v *= l * uniform01(rng);
        break;
      case 1:  // on the sphere
        random_direction(rng, row);
        for (double& v : row) v *= l;
        break;
      case 2: {  // clustered by class
        random_direction(rng, row);
        double norm = 0.0;
        for (std::size_t d = 0; d < h; ++d) {
          row[d] = l * (centers[c * h + d] + 0.3 * row[d] * uniform01(rng));
          norm += row[d] * row[d];
        }
        norm = std::sqrt(norm);
        if (norm > l) {
          for (double& v : row) v *= l / norm;
        }
        break;
      }
      case 3:  // f = 0
        break;
      case 4:  // +-L e_1 by class parity
        row[0] = c % 2 == 0 ? l : -l;
        break;
      default:  // clustered sphere, then shrunk by s in (0, 1]
        for (std::size_t d = 0; d < h; ++d) row[d] = l * scale * centers[c * h + d];
        break;
    }
  }
  FeatureMap f(std::move(table), h, l);
  return Instance{std::move(data), std::move(prior), std::move(f), k, l};
}

PositiveCoupling random_coupling(Rng& rng, const LabeledDataset& data, bool identity) {
  if (identity) return PositiveCoupling::identity(data);
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(data.num_classes()));
  for (int c = 0; c < data.num_classes(); ++c) {
    const std::size_t n = data.class_size(c);
    auto& m = rows[static_cast<std::size_t>(c)];
    m.resize(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += (m[i * n + j] = std::pow(uniform01(rng), 3.0) + 1e-3);
      for (std::size_t j = 0; j < n; ++j) m[i * n + j] /= total;
    }
  }
  return PositiveCoupling(std::move(rows));
}

}  // namespace

SandwichReports check_sandwich(int instance_count, int c_max, int k_max, std::uint64_t seed, int threads) {
  if (instance_count < 1) throw DomainError("need at least one instance");
  if (c_max < 2 || c_max > 8) throw DomainError("C_max must lie in [2, 8]");
  if (k_max < 1 || k_max > 6) throw DomainError("K_max must lie in [1, 6]");
  std::vector<SandwichReports> partial(static_cast<std::size_t>(instance_count));

  parallel_for_chunks(partial.size(), threads, [&](std::size_t i) {
    const Instance inst = make_instance(seed, i, c_max, k_max);
    const BoundParams p(inst.data.num_classes(), inst.num_negatives, inst.norm_bound, inst.prior);
    const MeanClassifier mc = build_mean_classifier(inst.data, inst.features);
    const double l_sup = mean_supervised_loss(inst.data, inst.prior, inst.features, mc);
    const double l_cont = contrastive_loss_exact(inst.data, inst.prior, inst.features, inst.num_negatives).value;
    const RegionCheck region = feasible_region_contains(p, l_cont, l_sup);
    double margin = std::numeric_limits<double>::infinity();
    for (double s : region.slacks) margin = std::min(margin, s);
    partial[i].ci.record(margin);

    Rng rng = make_substream(seed ^ 0x6e6f6e5f6369ULL, i);
    const PositiveCoupling coupling = random_coupling(rng, inst.data, i % 3 == 0);
    const double l_cont_nci =
        contrastive_loss_exact(inst.data, inst.prior, inst.features, inst.num_negatives, coupling).value;
    const RelaxedDeltas relaxed = ci_relaxed_deltas(p);
    partial[i].non_ci.record(std::min(l_cont_nci + relaxed.delta_upper_nci - l_sup,
                                      l_sup - (l_cont_nci + relaxed.delta_lower_nci)));
  });

  SandwichReports out;
  out.ci.name = "sandwich_ci";
  out.non_ci.name = "sandwich_non_ci";
  const std::vector<std::pair<std::string, std::string>> params{{"instances", std::to_string(instance_count)},
                                                                {"C_max", std::to_string(c_max)},
                                                                {"K_max", std::to_string(k_max)},
                                                                {"seed", std::to_string(seed)}};
  out.ci.params = params;
  out.non_ci.params = params;
  for (const auto& r : partial) {
    out.ci.merge(r.ci);
    out.non_ci.merge(r.non_ci);
  }
  return out;
}

// ---------------------------------------------------------- compare table --

std::vector<CompareRow> compare_bounds_table(int num_classes, const std::vector<int>& k_list, double norm_bound,
                                             CompareMode mode, std::optional<double> l_cont) {
  if (mode == CompareMode::kAtGivenLCont && !l_cont) throw DomainError("compare mode needs an l_cont value");
  std::vector<CompareRow> rows;
  for (int k : k_list) {
    const auto p = BoundParams::uniform(num_classes, k, norm_bound);
    const double lc = mode == CompareMode::kAtEssCont ? essential_cont(p) : *l_cont;
    const auto comp = competitor_bounds(p, lc);
    CompareRow row;
    row.num_classes = num_classes;
    row.num_negatives = k;
    row.norm_bound = norm_bound;
    row.l_cont = lc;
    row.ours_upper = lc + delta_upper(p);
    row.ours_lower = lc + delta_lower(p);
    row.arora = comp.arora;
    row.nozawa = comp.nozawa;
    row.ash = comp.ash;
    row.ess_sup = essential_sup(p);
    rows.push_back(row);
  }
  return rows;
}

void write_compare_csv(const std::vector<CompareRow>& rows, std::ostream& out) {
  auto value = [](const BoundValue& b) { return b.valid ? format_double(b.value) : std::string(); };
  out << kCompareCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.num_classes << ',' << r.num_negatives << ',' << format_double(r.norm_bound) << ','
        << format_double(r.l_cont) << ',' << format_double(r.ours_upper) << ',' << format_double(r.ours_lower) << ','
        << value(r.arora) << ',' << (r.arora.valid ? 1 : 0) << ',' << value(r.nozawa) << ','
        << (r.nozawa.valid ? 1 : 0) << ',' << value(r.ash) << ',' << format_double(r.ess_sup) << '\n';
  }
}

}  // namespace curl
