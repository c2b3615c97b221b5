#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "curl_lab/bounds.hpp"
#include "curl_lab/core_math.hpp"
#include "curl_lab/losses.hpp"
#include "curl_lab/synth.hpp"
#include "curl_lab/verify.hpp"

namespace py = pybind11;
using namespace curl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

BoundParams make_params(int classes, int negatives, double norm, const std::optional<std::vector<double>>& prior) {
  if (prior) return BoundParams(classes, negatives, norm, ClassPrior(*prior));
  return BoundParams::uniform(classes, negatives, norm);
}

std::vector<double> rows_of(const Array& a, std::size_t& rows, std::size_t& cols) {
  if (a.ndim() != 2) throw DomainError("expected a 2-d array");
  rows = static_cast<std::size_t>(a.shape(0));
  cols = static_cast<std::size_t>(a.shape(1));
  return {a.data(), a.data() + a.size()};
}

LabeledDataset make_dataset(const Array& points, const IntArray& labels, int num_classes) {
  std::size_t n = 0, d = 0;
  auto flat = rows_of(points, n, d);
  if (labels.ndim() != 1 || static_cast<std::size_t>(labels.shape(0)) != n) {
    throw DomainError("labels must be 1-d with one entry per point");
  }
  std::vector<int> lab(labels.data(), labels.data() + n);
  if (num_classes <= 0) num_classes = lab.empty() ? 0 : *std::max_element(lab.begin(), lab.end()) + 1;
  return LabeledDataset(std::move(flat), d, std::move(lab), num_classes);
}

FeatureMap make_features(const Array& features, double norm_bound) {
  std::size_t n = 0, h = 0;
  auto flat = rows_of(features, n, h);
  return FeatureMap(std::move(flat), h, norm_bound);
}

py::object optional_value(const BoundValue& v) {
  if (!v.valid) return py::none();
  return py::float_(v.value);
}

py::dict report_dict(const BoundsReport& r) {
  py::dict d;
  d["C"] = r.num_classes;
  d["K"] = r.num_negatives;
  d["L"] = r.norm_bound;
  d["uniform_prior"] = r.uniform_prior;
  d["l_cont"] = r.l_cont;
  d["delta_upper"] = r.delta_upper;
  d["delta_lower"] = r.delta_lower;
  d["gap"] = r.gap;
  d["ess_sup"] = r.ess_sup;
  d["ess_cont"] = r.ess_cont;
  d["v_next"] = r.v_next;
  d["tau"] = r.tau;
  d["e_log_col"] = r.e_log_col;
  d["arora"] = optional_value(r.arora_upper);
  d["nozawa"] = optional_value(r.nozawa_upper);
  d["ash"] = optional_value(r.ash_upper);
  d["info_nce"] = r.info_nce;
  return d;
}

py::dict estimate_dict(const LossEstimate& e) {
  py::dict d;
  d["value"] = e.value;
  d["std_error"] = e.std_error;
  d["n_samples"] = e.n_samples;
  d["exact"] = e.mode == LossEstimate::Mode::kExact;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Contrastive / mean-supervised loss bounds and checks";

  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<UnsupportedConfiguration>(m, "UnsupportedConfiguration", PyExc_ValueError);
  py::register_exception<BudgetExceeded>(m, "BudgetExceeded", PyExc_RuntimeError);

  m.def("log_sum_exp", [](const std::vector<double>& z) { return log_sum_exp(z); }, py::arg("z"));
  m.def("log_cosh", &log_cosh, py::arg("x"));
  m.def("coupon_collector_prob", [](int c, int k) { return coupon_collector_prob(c, k).value(); },
        py::arg("num_classes"), py::arg("num_draws"));
  m.def("collision_prob", [](int c, int k) { return collision_prob(c, k).value(); }, py::arg("num_classes"),
        py::arg("num_negatives"));
  m.def("expected_log_col_plus_one", &expected_log_col_plus_one, py::arg("num_classes"), py::arg("num_negatives"));

  m.def(
      "delta_upper",
      [](int c, int k, double l, std::optional<std::vector<double>> prior) {
        return delta_upper(make_params(c, k, l, prior));
      },
      py::arg("num_classes"), py::arg("num_negatives"), py::arg("norm_bound"), py::arg("prior") = py::none());
  m.def(
      "delta_lower",
      [](int c, int k, double l, std::optional<std::vector<double>> prior) {
        return delta_lower(make_params(c, k, l, prior));
      },
      py::arg("num_classes"), py::arg("num_negatives"), py::arg("norm_bound"), py::arg("prior") = py::none());
  m.def(
      "essential_sup", [](int c, double l) { return essential_sup(BoundParams::uniform(c, 1, l)); },
      py::arg("num_classes"), py::arg("norm_bound"));
  m.def(
      "essential_cont", [](int c, int k, double l) { return essential_cont(BoundParams::uniform(c, k, l)); },
      py::arg("num_classes"), py::arg("num_negatives"), py::arg("norm_bound"));
  m.def(
      "bounds_report",
      [](int c, int k, double l, std::optional<std::vector<double>> prior, std::optional<double> l_cont) {
        return report_dict(compute_bounds_report(make_params(c, k, l, prior), l_cont));
      },
      py::arg("num_classes"), py::arg("num_negatives"), py::arg("norm_bound"), py::arg("prior") = py::none(),
      py::arg("l_cont") = py::none());
  m.def(
      "feasible_region_contains",
      [](int c, int k, double l, double l_cont, double l_sup, double tol, std::optional<std::vector<double>> prior) {
        const auto r = feasible_region_contains(make_params(c, k, l, prior), l_cont, l_sup, tol);
        return py::make_tuple(r.inside, std::vector<double>(r.slacks.begin(), r.slacks.end()));
      },
      py::arg("num_classes"), py::arg("num_negatives"), py::arg("norm_bound"), py::arg("l_cont"), py::arg("l_sup"),
      py::arg("tolerance") = 0.0, py::arg("prior") = py::none());
  m.def(
      "competitor_bounds",
      [](int c, int k, double l, double l_cont) {
        const auto b = competitor_bounds(BoundParams::uniform(c, k, l), l_cont);
        py::dict d;
        d["arora"] = optional_value(b.arora);
        d["nozawa"] = optional_value(b.nozawa);
        d["ash"] = optional_value(b.ash);
        return d;
      },
      py::arg("num_classes"), py::arg("num_negatives"), py::arg("norm_bound"), py::arg("l_cont"));
  m.def(
      "info_nce", [](double l_cont, int k) { return info_nce_value(l_cont, k).value; }, py::arg("l_cont"),
      py::arg("num_negatives"));
  m.def(
      "compare_csv",
      [](int c, const std::vector<int>& ks, double l, std::optional<double> l_cont) {
        const auto rows = compare_bounds_table(c, ks, l, l_cont ? CompareMode::kAtGivenLCont : CompareMode::kAtEssCont,
                                               l_cont);
        std::ostringstream out;
        write_compare_csv(rows, out);
        return out.str();
      },
      py::arg("num_classes"), py::arg("k_list"), py::arg("norm_bound"), py::arg("l_cont") = py::none());

  m.def(
      "mean_supervised_loss",
      [](const Array& features, const IntArray& labels, double norm_bound, int num_classes) {
        const auto data = make_dataset(features, labels, num_classes);
        const auto f = make_features(features, norm_bound);
        return mean_supervised_loss(data, empirical_prior(data), f, build_mean_classifier(data, f));
      },
      py::arg("features"), py::arg("labels"), py::arg("norm_bound"), py::arg("num_classes") = 0);
  m.def(
      "contrastive_loss",
      [](const Array& features, const IntArray& labels, double norm_bound, int k, std::int64_t n_samples,
         std::uint64_t seed, int threads, int num_classes) {
        const auto data = make_dataset(features, labels, num_classes);
        const auto f = make_features(features, norm_bound);
        const auto prior = empirical_prior(data);
        py::gil_scoped_release release;
        const auto e = n_samples > 0 ? contrastive_loss_mc(data, prior, f, k, n_samples, seed, threads)
                                     : contrastive_loss_exact(data, prior, f, k);
        py::gil_scoped_acquire acquire;
        return estimate_dict(e);
      },
      py::arg("features"), py::arg("labels"), py::arg("norm_bound"), py::arg("num_negatives"),
      py::arg("n_samples") = 0, py::arg("seed") = 0, py::arg("threads") = 1, py::arg("num_classes") = 0);

  m.def(
      "gen_circle",
      [](int c, int n, std::uint64_t seed) {
        const auto d = gen_circle(c, n, seed);
        Array pts({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(d.dim())});
        std::copy(d.raw_points().begin(), d.raw_points().end(), pts.mutable_data());
        IntArray lab(static_cast<py::ssize_t>(d.size()));
        std::copy(d.labels().begin(), d.labels().end(), lab.mutable_data());
        return py::make_tuple(pts, lab);
      },
      py::arg("num_classes"), py::arg("n_per_class"), py::arg("seed") = 0);
  m.def(
      "train",
      [](int k, int epochs, std::uint64_t seed, int classes, int n_per_class, int batch_size, int threads) {
        TrainConfig cfg;
        cfg.num_negatives = k;
        cfg.epochs = epochs;
        cfg.seed = seed;
        cfg.num_classes = classes;
        cfg.n_per_class = n_per_class;
        cfg.batch_size = batch_size;
        cfg.threads = threads;
        std::vector<TrajectoryRecord> records;
        {
          py::gil_scoped_release release;
          records = train_contrastive(cfg);
        }
        py::list out;
        for (const auto& r : records) {
          py::dict d;
          d["epoch"] = r.epoch;
          d["l_cont"] = r.l_cont.value;
          d["l_cont_se"] = r.l_cont.std_error;
          d["l_sup"] = r.l_sup;
          d["accuracy"] = r.accuracy;
          d["lr"] = r.lr;
          out.append(d);
        }
        return out;
      },
      py::arg("num_negatives"), py::arg("epochs"), py::arg("seed") = 0, py::arg("num_classes") = 10,
      py::arg("n_per_class") = 1000, py::arg("batch_size") = 1024, py::arg("threads") = 1);
  m.def("gradient_check", &mlp_gradient_check, py::arg("seed") = 0);

  m.def(
      "verify_lemmas",
      [](int n_max, const std::vector<double>& l_set, std::int64_t trials, std::uint64_t seed, int threads) {
        py::gil_scoped_release release;
        const auto lse = check_lemma_lse(n_max, l_set, trials, seed, threads);
        const auto off = check_lemma_offset(n_max, l_set, trials, seed + 1, threads);
        py::gil_scoped_acquire acquire;
        return py::make_tuple(lse.passed(), off.passed(), lse.to_json(), off.to_json());
      },
      py::arg("n_max"), py::arg("l_set"), py::arg("trials"), py::arg("seed") = 0, py::arg("threads") = 1);
  m.def(
      "verify_sandwich",
      [](int instances, int c_max, int k_max, std::uint64_t seed, int threads) {
        py::gil_scoped_release release;
        const auto r = check_sandwich(instances, c_max, k_max, seed, threads);
        py::gil_scoped_acquire acquire;
        return py::make_tuple(r.ci.passed(), r.non_ci.passed());
      },
      py::arg("instances"), py::arg("c_max"), py::arg("k_max"), py::arg("seed") = 0, py::arg("threads") = 1);
}
