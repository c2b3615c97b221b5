#include "curl_lab/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "curl_lab/bounds.hpp"
#include "curl_lab/dataset_io.hpp"
#include "curl_lab/format.hpp"
#include "curl_lab/losses.hpp"
#include "curl_lab/parallel.hpp"
#include "curl_lab/synth.hpp"
#include "curl_lab/verify.hpp"

namespace curl {

namespace {

using Json = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Json number_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(); }
Json number_or_null(const std::optional<double>& x) { return x ? number_or_null(*x) : Json(); }
std::string csv_cell(const std::optional<double>& x) {
  return x && std::isfinite(*x) ? format_double(*x) : std::string();
}
std::string csv_cell(const BoundValue& b) { return b.valid ? format_double(b.value) : std::string(); }

// Doubles go through format_double so every file uses 17 significant digits.
std::string dump(const Json& j);

void dump_into(const Json& j, std::string& s, int indent, int depth) {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string close(static_cast<std::size_t>(indent * depth), ' ');
  if (j.is_number_float()) {
    s += format_double(j.get<double>());
  } else if (j.is_object()) {
    if (j.empty()) {
      s += "{}";
      return;
    }
    s += "{\n";
    bool first = true;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!first) s += ",\n";
      first = false;
      s += pad + Json(it.key()).dump() + ": ";
      dump_into(it.value(), s, indent, depth + 1);
    }
    s += "\n" + close + "}";
  } else if (j.is_array()) {
    if (j.empty()) {
      s += "[]";
      return;
    }
    s += "[\n";
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) s += ",\n";
      s += pad;
      dump_into(j[i], s, indent, depth + 1);
    }
    s += "\n" + close + "]";
  } else {
    s += j.dump();
  }
}

std::string dump(const Json& j) {
  std::string s;
  dump_into(j, s, 2, 0);
  s += '\n';
  return s;
}

// ------------------------------------------------------------------ output --

struct OutputSink {
  std::string path;
  std::ostream& fallback;

  void write(const std::string& text) const {
    if (path.empty()) {
      fallback << text;
      return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << text;
    if (!f) throw std::runtime_error("write failed for " + path);
  }
};

Json option_value(const CLI::Option* opt) {
  const auto& res = opt->results();
  if (opt->get_expected_max() == 0) return Json(opt->count() > 0);
  if (res.empty()) {
    const std::string def = opt->get_default_str();
    return def.empty() ? Json() : Json(def);
  }
  if (res.size() == 1 && opt->get_expected_max() <= 1) return Json(res.front());
  return Json(res);
}

void write_manifest(const CLI::App& sub, const std::vector<std::string>& args, const std::vector<std::string>& outputs,
                    const std::vector<std::uint64_t>& seeds, int threads, double seconds) {
  if (outputs.empty()) return;
  Json m;
  m["tool"] = "curl_lab";
  m["version"] = kToolVersion;
  m["subcommand"] = sub.get_name();
  m["argv"] = args;
  Json params = Json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_name() == "--help" || opt->get_name().empty()) continue;
    params[opt->get_name()] = option_value(opt);
  }
  m["params"] = params;
  m["seeds"] = seeds;
  m["threads"] = threads;
  m["outputs"] = outputs;
  m["duration_seconds"] = seconds;
  std::ofstream f(outputs.front() + ".manifest.json", std::ios::binary | std::ios::trunc);
  f << dump(m);
}

// ------------------------------------------------------------------- prior --

ClassPrior load_prior(const std::string& spec, int num_classes) {
  if (spec == "uniform") return ClassPrior::uniform(num_classes);
  std::ifstream in(spec);
  if (!in) throw UsageError("cannot read prior file " + spec);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  std::vector<double> probs;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') {
    try {
      probs = Json::parse(text).get<std::vector<double>>();
    } catch (const std::exception& e) {
      throw UsageError("prior file " + spec + " is not a JSON number array");
    }
  } else {
    std::replace(text.begin(), text.end(), ',', ' ');
    std::istringstream ss(text);
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        probs.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw UsageError("prior file " + spec + ": cannot parse '" + tok + "'");
      }
    }
  }
  if (static_cast<int>(probs.size()) != num_classes) {
    throw UsageError("prior file has " + std::to_string(probs.size()) + " entries but --classes is " +
                     std::to_string(num_classes));
  }
  try {
    return ClassPrior(std::move(probs));
  } catch (const DomainError& e) {
    throw UsageError(std::string("invalid prior: ") + e.what());
  }
}

// ------------------------------------------------------------------ bounds --

Json bounds_json(const BoundsReport& r) {
  Json j;
  j["C"] = r.num_classes;
  j["K"] = r.num_negatives;
  j["L"] = r.norm_bound;
  j["uniform_prior"] = r.uniform_prior;
  j["l_cont"] = number_or_null(r.l_cont);
  j["delta_upper"] = r.delta_upper;
  j["delta_lower"] = r.delta_lower;
  j["gap"] = r.gap;
  j["ess_sup"] = r.ess_sup;
  j["ess_cont"] = number_or_null(r.ess_cont);
  j["v_next"] = r.v_next;
  j["tau"] = r.tau;
  j["e_log_col"] = r.e_log_col;
  auto bound = [&](const char* name, const BoundValue& b) {
    j[std::string(name) + "_upper"] = b.valid ? Json(b.value) : Json();
    j[std::string(name) + "_valid"] = b.valid;
    j[std::string(name) + "_reason"] = std::string(to_string(b.reason));
  };
  bound("arora", r.arora_upper);
  bound("nozawa", r.nozawa_upper);
  bound("ash", r.ash_upper);
  j["info_nce"] = number_or_null(r.info_nce);
  return j;
}

std::string bounds_csv(const std::vector<BoundsReport>& rows) {
  std::string s =
      "C,K,L,uniform_prior,l_cont,delta_upper,delta_lower,gap,ess_sup,ess_cont,v_next,tau,e_log_col,"
      "arora_upper,arora_valid,nozawa_upper,nozawa_valid,ash_upper,ash_valid,info_nce\n";
  for (const auto& r : rows) {
    s += std::to_string(r.num_classes) + ',' + std::to_string(r.num_negatives) + ',' + format_double(r.norm_bound) +
         ',' + (r.uniform_prior ? "1" : "0") + ',' + csv_cell(r.l_cont) + ',' + format_double(r.delta_upper) + ',' +
         format_double(r.delta_lower) + ',' + format_double(r.gap) + ',' + format_double(r.ess_sup) + ',' +
         csv_cell(r.ess_cont) + ',' + format_double(r.v_next) + ',' + format_double(r.tau) + ',' +
         format_double(r.e_log_col) + ',' + csv_cell(r.arora_upper) + ',' + (r.arora_upper.valid ? "1" : "0") + ',' +
         csv_cell(r.nozawa_upper) + ',' + (r.nozawa_upper.valid ? "1" : "0") + ',' + csv_cell(r.ash_upper) + ',' +
         (r.ash_upper.valid ? "1" : "0") + ',' + csv_cell(r.info_nce) + '\n';
  }
  return s;
}

// ------------------------------------------------------------------ verify --

std::string reports_csv(const std::vector<VerificationReport>& reports) {
  std::string s = "name,trials,failures,worst_margin,passed\n";
  for (const auto& r : reports) {
    s += r.name + ',' + std::to_string(r.trials) + ',' + std::to_string(r.failures) + ',' +
         csv_cell(std::optional<double>(r.worst_margin)) + ',' + (r.passed() ? "1" : "0") + '\n';
  }
  return s;
}

// -------------------------------------------------------------- trajectory --

struct TrajectoryRow {
  std::uint64_t seed;
  int k;
  TrajectoryRecord rec;
};

std::string trajectory_csv(const std::vector<TrajectoryRow>& rows) {
  std::string s = "seed,K,epoch,l_cont,l_cont_se,l_sup,accuracy,lr\n";
  for (const auto& r : rows) {
    s += std::to_string(r.seed) + ',' + std::to_string(r.k) + ',' + std::to_string(r.rec.epoch) + ',' +
         format_double(r.rec.l_cont.value) + ',' + format_double(r.rec.l_cont.std_error) + ',' +
         format_double(r.rec.l_sup) + ',' + format_double(r.rec.accuracy) + ',' + format_double(r.rec.lr) + '\n';
  }
  return s;
}

Json trajectory_json(const std::vector<TrajectoryRow>& rows) {
  Json a = Json::array();
  for (const auto& r : rows) {
    Json j;
    j["seed"] = r.seed;
    j["K"] = r.k;
    j["epoch"] = r.rec.epoch;
    j["l_cont"] = r.rec.l_cont.value;
    j["l_cont_se"] = r.rec.l_cont.std_error;
    j["l_sup"] = r.rec.l_sup;
    j["accuracy"] = r.rec.accuracy;
    j["lr"] = r.rec.lr;
    a.push_back(j);
  }
  return a;
}

std::string dataset_json(const LabeledDataset& d) {
  Json a = Json::array();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto p = d.point(i);
    a.push_back(Json{{"x", std::vector<double>(p.begin(), p.end())}, {"label", d.label(i)}});
  }
  return dump(a);
}

LabeledDataset features_dataset(const FeatureMap& f, const LabeledDataset& data) {
  return LabeledDataset(std::vector<double>(f.raw().begin(), f.raw().end()), f.dim(),
                        std::vector<int>(data.labels().begin(), data.labels().end()), data.num_classes());
}

FeatureMap features_of(const LabeledDataset& d) {
  double max_norm = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto p = d.point(i);
    double s = 0.0;
    for (double v : p) s += v * v;
    max_norm = std::max(max_norm, std::sqrt(s));
  }
  return FeatureMap(std::vector<double>(d.raw_points().begin(), d.raw_points().end()), d.dim(), max_norm);
}

std::string resolve_format(const std::string& requested, const char* fallback) {
  return requested.empty() ? std::string(fallback) : requested;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive surrogate-bound calculator and experiment driver", "curl_lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  const auto formats = CLI::IsMember({"csv", "json"});
  std::string format;
  std::string out_path;
  int threads = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", out_path, "Output file (stdout when omitted)");
    sub->add_option("--threads", threads, "Worker threads (default: CURL_LAB_THREADS or 1)")
        ->check(CLI::NonNegativeNumber);
  };

  // bounds
  std::vector<int> b_classes, b_negatives;
  std::vector<double> b_norms;
  std::string b_prior = "uniform";
  std::optional<double> b_lcont;
  auto* bounds = app.add_subcommand("bounds", "Bound quantities for one setting or a (C, K, L) grid");
  bounds->add_option("--classes", b_classes, "C (comma list allowed)")->required()->delimiter(',');
  bounds->add_option("--negatives", b_negatives, "K (comma list allowed)")->required()->delimiter(',');
  bounds->add_option("--norm-bound", b_norms, "L (comma list allowed)")->required()->delimiter(',');
  bounds->add_option("--prior", b_prior, "uniform or a file of C probabilities")->capture_default_str();
  bounds->add_option("--l-cont", b_lcont, "Contrastive loss for the competitor bounds (default ess_cont)");
  bounds->add_option("--format", format, "csv or json (json for a single setting)")->check(formats);
  add_common(bounds);

  // region
  int r_classes = 0, r_negatives = 0;
  double r_norm = 0.0, r_lcont = 0.0, r_lsup = 0.0, r_tol = 0.0;
  std::string r_prior = "uniform";
  auto* region = app.add_subcommand("region", "Feasible-region slacks for a (l_cont, l_sup) point");
  region->add_option("--classes", r_classes)->required()->check(CLI::Range(2, 1 << 20));
  region->add_option("--negatives", r_negatives)->required()->check(CLI::Range(1, 1 << 24));
  region->add_option("--norm-bound", r_norm)->required()->check(CLI::NonNegativeNumber);
  region->add_option("--prior", r_prior)->capture_default_str();
  region->add_option("--l-cont", r_lcont)->required();
  region->add_option("--l-sup", r_lsup)->required();
  region->add_option("--tolerance", r_tol)->capture_default_str()->check(CLI::NonNegativeNumber);
  region->add_option("--format", format, "csv or json (default json)")->check(formats);
  add_common(region);

  // compare
  int c_classes = 10;
  std::vector<int> c_negatives{1, 2, 4, 8, 16, 32, 64, 128, 256, 512};
  double c_norm = 1.0;
  std::optional<double> c_lcont;
  auto* compare = app.add_subcommand("compare", "Our bounds against prior closed forms over a K grid");
  compare->add_option("--classes", c_classes)->capture_default_str()->check(CLI::Range(2, 1 << 20));
  compare->add_option("--negatives", c_negatives)->capture_default_str()->delimiter(',');
  compare->add_option("--norm-bound", c_norm)->capture_default_str()->check(CLI::NonNegativeNumber);
  compare->add_option("--l-cont", c_lcont, "Evaluate at this l_cont instead of ess_cont");
  compare->add_option("--format", format, "csv or json")->check(formats);
  add_common(compare);

  // verify
  std::string v_suite = "all";
  std::int64_t v_trials = 100000;
  std::uint64_t v_seed = 0;
  int v_nmax = 64, v_kmax = 64, v_instances = 1000, v_cmax = 8, v_skmax = 6;
  std::vector<double> v_lset{0.5, 1.0, 2.0};
  auto* verify = app.add_subcommand("verify", "Lemma and sandwich property suites");
  verify->add_option("--suite", v_suite)->capture_default_str()->check(CLI::IsMember({"lemmas", "sandwich", "all"}));
  verify->add_option("--trials", v_trials, "Random trials per (N or K, L) cell")->capture_default_str()
      ->check(CLI::PositiveNumber);
  verify->add_option("--seed", v_seed)->capture_default_str();
  verify->add_option("--n-max", v_nmax)->capture_default_str()->check(CLI::Range(1, 4096));
  verify->add_option("--k-max", v_kmax)->capture_default_str()->check(CLI::Range(1, 4096));
  verify->add_option("--l-set", v_lset)->capture_default_str()->delimiter(',');
  verify->add_option("--instances", v_instances)->capture_default_str()->check(CLI::PositiveNumber);
  verify->add_option("--c-max", v_cmax)->capture_default_str()->check(CLI::Range(2, 8));
  verify->add_option("--sandwich-k-max", v_skmax)->capture_default_str()->check(CLI::Range(1, 6));
  verify->add_option("--format", format, "csv or json")->check(formats);
  add_common(verify);

  // synth-data
  int d_classes = 10, d_n = 1000;
  std::uint64_t d_seed = 0;
  std::string d_format;
  auto* synth_data = app.add_subcommand("synth-data", "Write the circle dataset");
  synth_data->add_option("--classes", d_classes)->capture_default_str()->check(CLI::PositiveNumber);
  synth_data->add_option("--n-per-class", d_n)->capture_default_str();
  synth_data->add_option("--seed", d_seed)->capture_default_str();
  synth_data->add_option("--format", d_format, "csv, json or binary")
      ->check(CLI::IsMember({"csv", "json", "binary"}));
  add_common(synth_data);

  // synth-train
  TrainConfig t_cfg;
  std::vector<int> t_k{16};
  std::vector<std::uint64_t> t_seeds{0};
  std::string t_features;
  auto* synth_train = app.add_subcommand("synth-train", "Train the circle MLP and record trajectories");
  synth_train->add_option("--K,--negatives", t_k, "K (comma list allowed)")->capture_default_str()->delimiter(',');
  synth_train->add_option("--seed", t_seeds, "Seed (comma list allowed)")->capture_default_str()->delimiter(',');
  synth_train->add_option("--epochs", t_cfg.epochs)->capture_default_str();
  synth_train->add_option("--classes", t_cfg.num_classes)->capture_default_str();
  synth_train->add_option("--n-per-class", t_cfg.n_per_class)->capture_default_str();
  synth_train->add_option("--train-fraction", t_cfg.train_fraction)->capture_default_str();
  synth_train->add_option("--batch-size", t_cfg.batch_size)->capture_default_str();
  synth_train->add_option("--lr", t_cfg.learning_rate)->capture_default_str();
  synth_train->add_option("--weight-decay", t_cfg.weight_decay)->capture_default_str();
  synth_train->add_option("--lr-patience", t_cfg.lr_patience)->capture_default_str();
  synth_train->add_option("--eval-samples-per-point", t_cfg.eval_samples_per_point)->capture_default_str();
  synth_train->add_option("--features-out", t_features, "Prefix for learned train/test feature files");
  synth_train->add_option("--format", format, "csv or json")->check(formats);
  add_common(synth_train);

  // probe
  std::string p_train, p_eval;
  ProbeOptions p_opts;
  bool p_cold = false;
  auto* probe = app.add_subcommand("probe", "Linear probe on saved features");
  probe->add_option("--train", p_train, "Training features (CSV or CURLDATA)")->required();
  probe->add_option("--eval", p_eval, "Evaluation features (CSV or CURLDATA)")->required();
  probe->add_option("--epochs", p_opts.epochs)->capture_default_str()->check(CLI::NonNegativeNumber);
  probe->add_option("--lr", p_opts.learning_rate)->capture_default_str()->check(CLI::PositiveNumber);
  probe->add_option("--seed", p_opts.seed)->capture_default_str();
  probe->add_flag("--cold-start", p_cold, "Start from small random weights instead of the class means");
  probe->add_option("--format", format, "csv or json (default json)")->check(formats);
  add_common(probe);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  const auto start = std::chrono::steady_clock::now();
  const int workers = resolve_threads(threads);
  const OutputSink sink{out_path, out};
  std::vector<std::string> outputs;
  if (!out_path.empty()) outputs.push_back(out_path);
  std::vector<std::uint64_t> seeds;
  CLI::App* used = app.get_subcommands().front();
  int code = 0;

  try {
    if (used == bounds) {
      std::vector<BoundsReport> rows;
      if (b_prior != "uniform" && b_classes.size() != 1) throw UsageError("--prior file needs a single --classes");
      for (int c : b_classes) {
        for (int k : b_negatives) {
          for (double l : b_norms) {
            BoundParams p(c, k, l, load_prior(b_prior, c));
            rows.push_back(compute_bounds_report(p, b_lcont));
          }
        }
      }
      const auto fmt = resolve_format(format, rows.size() == 1 ? "json" : "csv");
      if (fmt == "csv") {
        sink.write(bounds_csv(rows));
      } else if (rows.size() == 1) {
        sink.write(dump(bounds_json(rows.front())));
      } else {
        Json a = Json::array();
        for (const auto& r : rows) a.push_back(bounds_json(r));
        sink.write(dump(a));
      }
    } else if (used == region) {
      BoundParams p(r_classes, r_negatives, r_norm, load_prior(r_prior, r_classes));
      const auto check = feasible_region_contains(p, r_lcont, r_lsup, r_tol);
      static constexpr const char* kNames[] = {"surrogate_upper", "surrogate_lower", "essential_sup",
                                               "essential_cont"};
      if (resolve_format(format, "json") == "json") {
        Json j;
        j["C"] = r_classes;
        j["K"] = r_negatives;
        j["L"] = r_norm;
        j["l_cont"] = r_lcont;
        j["l_sup"] = r_lsup;
        j["inside"] = check.inside;
        for (int i = 0; i < 4; ++i) j[std::string("slack_") + kNames[i]] = number_or_null(check.slacks[i]);
        sink.write(dump(j));
      } else {
        std::string s = "C,K,L,l_cont,l_sup,inside";
        for (const char* n : kNames) s += std::string(",slack_") + n;
        s += '\n' + std::to_string(r_classes) + ',' + std::to_string(r_negatives) + ',' + format_double(r_norm) + ',' +
             format_double(r_lcont) + ',' + format_double(r_lsup) + ',' + (check.inside ? "1" : "0");
        for (double v : check.slacks) s += ',' + csv_cell(std::optional<double>(v));
        sink.write(s + '\n');
      }
    } else if (used == compare) {
      const auto rows = compare_bounds_table(c_classes, c_negatives, c_norm,
                                             c_lcont ? CompareMode::kAtGivenLCont : CompareMode::kAtEssCont, c_lcont);
      if (resolve_format(format, "csv") == "csv") {
        std::ostringstream s;
        write_compare_csv(rows, s);
        sink.write(s.str());
      } else {
        Json a = Json::array();
        for (const auto& r : rows) {
          a.push_back(Json{{"C", r.num_classes},
                           {"K", r.num_negatives},
                           {"L", r.norm_bound},
                           {"l_cont", r.l_cont},
                           {"ours_upper", r.ours_upper},
                           {"ours_lower", r.ours_lower},
                           {"arora", r.arora.valid ? Json(r.arora.value) : Json()},
                           {"arora_valid", r.arora.valid},
                           {"nozawa", r.nozawa.valid ? Json(r.nozawa.value) : Json()},
                           {"nozawa_valid", r.nozawa.valid},
                           {"ash", r.ash.valid ? Json(r.ash.value) : Json()},
                           {"ess_sup", r.ess_sup}});
        }
        sink.write(dump(a));
      }
    } else if (used == verify) {
      seeds.push_back(v_seed);
      std::vector<VerificationReport> reports;
      if (v_suite != "sandwich") {
        reports.push_back(check_lemma_lse(v_nmax, v_lset, v_trials, v_seed, workers));
        reports.push_back(check_lemma_offset(v_kmax, v_lset, v_trials, v_seed, workers));
      }
      if (v_suite != "lemmas") {
        auto s = check_sandwich(v_instances, v_cmax, v_skmax, v_seed, workers);
        reports.push_back(std::move(s.ci));
        reports.push_back(std::move(s.non_ci));
      }
      if (resolve_format(format, "csv") == "csv") {
        sink.write(reports_csv(reports));
      } else {
        Json a = Json::array();
        for (const auto& r : reports) a.push_back(Json::parse(r.to_json()));
        sink.write(dump(a));
      }
      for (const auto& r : reports) {
        if (!r.passed()) {
          err << "verification failed: " << r.name << " (" << r.failures << " of " << r.trials << ")\n";
          code = 1;
        }
      }
    } else if (used == synth_data) {
      seeds.push_back(d_seed);
      if (out_path.empty()) throw UsageError("synth-data needs --out");
      const auto data = gen_circle(d_classes, d_n, d_seed);
      const auto fmt = d_format.empty() ? std::string("csv") : d_format;
      if (fmt == "csv") write_dataset_csv(data, out_path);
      else if (fmt == "binary") write_dataset_binary(data, out_path);
      else sink.write(dataset_json(data));
    } else if (used == synth_train) {
      seeds = t_seeds;
      std::vector<TrajectoryRow> rows;
      for (std::uint64_t seed : t_seeds) {
        for (int k : t_k) {
          TrainConfig cfg = t_cfg;
          cfg.seed = seed;
          cfg.num_negatives = k;
          cfg.threads = workers;
          auto result = train_contrastive_full(cfg);
          for (const auto& rec : result.records) rows.push_back({seed, k, rec});
          if (!t_features.empty()) {
            const std::string stem = t_features + "_seed" + std::to_string(seed) + "_K" + std::to_string(k);
            const auto& split = result.split;
            write_dataset_csv(features_dataset(result.model.features(split.train), split.train), stem + "_train.csv");
            write_dataset_csv(features_dataset(result.model.features(split.test), split.test), stem + "_test.csv");
            outputs.push_back(stem + "_train.csv");
            outputs.push_back(stem + "_test.csv");
          }
        }
      }
      if (resolve_format(format, "csv") == "csv") sink.write(trajectory_csv(rows));
      else sink.write(dump(trajectory_json(rows)));
    } else if (used == probe) {
      seeds.push_back(p_opts.seed);
      p_opts.warm_start_mean = !p_cold;
      const auto train = read_dataset(p_train);
      const auto eval = read_dataset(p_eval, train.num_classes());
      const auto f_train = features_of(train);
      const auto f_eval = features_of(eval);
      const auto result = linear_probe(train, f_train, eval, f_eval, p_opts);
      const auto mc = build_mean_classifier(train, f_train);
      const double mean_loss = mean_supervised_loss(train, empirical_prior(train), f_train, mc);
      const double mean_acc = mean_classifier_accuracy(eval, f_eval, mc);
      if (resolve_format(format, "json") == "json") {
        Json j;
        j["n_train"] = train.size();
        j["n_eval"] = eval.size();
        j["dim"] = train.dim();
        j["classes"] = train.num_classes();
        j["accuracy"] = result.accuracy;
        j["initial_train_loss"] = result.initial_train_loss;
        j["final_train_loss"] = result.final_train_loss;
        j["mean_classifier_train_loss"] = mean_loss;
        j["mean_classifier_accuracy"] = mean_acc;
        sink.write(dump(j));
      } else {
        sink.write("n_train,n_eval,dim,classes,accuracy,initial_train_loss,final_train_loss,"
                   "mean_classifier_train_loss,mean_classifier_accuracy\n" +
                   std::to_string(train.size()) + ',' + std::to_string(eval.size()) + ',' +
                   std::to_string(train.dim()) + ',' + std::to_string(train.num_classes()) + ',' +
                   format_double(result.accuracy) + ',' + format_double(result.initial_train_loss) + ',' +
                   format_double(result.final_train_loss) + ',' + format_double(mean_loss) + ',' +
                   format_double(mean_acc) + '\n');
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(*used, args, outputs, seeds, workers, seconds);
  return code;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace curl
