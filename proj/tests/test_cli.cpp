#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "curl_lab/cli.hpp"

using namespace curl;
namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream o, e;
  const int code = run_cli(args, o, e);
  return {code, o.str(), e.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "curl_lab_cli_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Cli, BoundsSingleSettingIsJson) {
  const auto r = run({"bounds", "--classes", "10", "--negatives", "10", "--norm-bound", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = Json::parse(r.out);
  EXPECT_NEAR(j["delta_upper"].get<double>(), 2 * 0.43378083048302719, 1e-14);
  EXPECT_EQ(j["arora_valid"], true);
  EXPECT_NE(r.out.find("\"delta_upper\": 0.867561660966054"), std::string::npos) << r.out;
}

TEST(Cli, BoundsGridIsCsv) {
  const auto r = run({"bounds", "--classes", "2,10", "--negatives", "1,5", "--norm-bound", "0,1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(r.out), 9);
  EXPECT_EQ(r.out.rfind("C,K,L,", 0), 0u);
  const auto j = run({"bounds", "--classes", "2,10", "--negatives", "1", "--norm-bound", "1", "--format", "json"});
  EXPECT_EQ(Json::parse(j.out).size(), 2u);
}

TEST(Cli, PriorFile) {
  const auto good = scratch("prior.json");
  std::ofstream(good) << "[0.5, 0.3, 0.2]";
  auto r = run({"bounds", "--classes", "3", "--negatives", "4", "--norm-bound", "1", "--prior", good.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = Json::parse(r.out);
  EXPECT_EQ(j["uniform_prior"], false);
  EXPECT_TRUE(j["ess_cont"].is_null());
  const auto plain = scratch("prior.txt");
  std::ofstream(plain) << "0.5 0.3\n0.2\n";
  r = run({"bounds", "--classes", "3", "--negatives", "4", "--norm-bound", "1", "--prior", plain.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  r = run({"bounds", "--classes", "4", "--negatives", "4", "--norm-bound", "1", "--prior", good.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("entries"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({"bounds", "--classes", "10"}).code, 2);
  EXPECT_EQ(run({"bounds", "--classes", "10", "--negatives", "1", "--norm-bound", "1", "--bogus"}).code, 2);
  EXPECT_EQ(run({"nonsense"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"bounds", "--classes", "1", "--negatives", "1", "--norm-bound", "1"}).code, 2);
  EXPECT_EQ(run({"synth-data", "--classes", "3"}).code, 2);
  EXPECT_EQ(run({"synth-train", "--K", "9999", "--epochs", "1"}).code, 2);
  const auto r = run({"region", "--classes", "10"});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, HelpAndVersion) {
  auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("synth-train"), std::string::npos);
  r = run({"--version"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find(kToolVersion), std::string::npos);
}

TEST(Cli, Region) {
  auto r = run({"region", "--classes", "10", "--negatives", "10", "--norm-bound", "1", "--l-cont", "2.3978952727983707",
                "--l-sup", "2.302585092994046"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(Json::parse(r.out)["inside"], true);
  r = run({"region", "--classes", "10", "--negatives", "10", "--norm-bound", "1", "--l-cont", "3", "--l-sup", "5",
           "--format", "csv"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find(",0,"), std::string::npos) << r.out;
}

TEST(Cli, CompareDefaultGrid) {
  const auto r = run({"compare"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(r.out), 11);
  EXPECT_EQ(r.out.rfind("C,K,L,l_cont,ours_upper", 0), 0u);
}

TEST(Cli, VerifyLemmasSmall) {
  const auto r = run({"verify", "--suite", "lemmas", "--trials", "2000", "--seed", "7", "--n-max", "10", "--k-max",
                      "8"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(r.out), 3);
}

TEST(Cli, SynthTrainWritesRowsAndManifest) {
  const auto out = scratch("t.csv");
  fs::remove(out.string() + ".manifest.json");
  const auto r = run({"synth-train", "--K", "4", "--seed", "0", "--epochs", "1", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = slurp(out);
  EXPECT_EQ(count_lines(text), 2);
  EXPECT_EQ(text.rfind("seed,K,epoch,l_cont,l_cont_se,l_sup,accuracy,lr\n0,4,0,", 0), 0u);
  const auto m = Json::parse(slurp(out.string() + ".manifest.json"));
  EXPECT_EQ(m["tool"], "curl_lab");
  EXPECT_EQ(m["version"], kToolVersion);
  EXPECT_EQ(m["subcommand"], "synth-train");
  EXPECT_EQ(m["seeds"][0], 0);
  EXPECT_EQ(m["outputs"][0], out.string());
  EXPECT_TRUE(m["duration_seconds"].is_number());
  EXPECT_EQ(m["params"]["--epochs"], "1");
}

TEST(Cli, SynthDataFormatsAndProbe) {
  const auto csv = scratch("d.csv");
  const auto bin = scratch("d.bin");
  const auto js = scratch("d.json");
  ASSERT_EQ(run({"synth-data", "--classes", "3", "--n-per-class", "20", "--out", csv.string()}).code, 0);
  ASSERT_EQ(run({"synth-data", "--classes", "3", "--n-per-class", "20", "--format", "binary", "--out", bin.string()})
                .code,
            0);
  ASSERT_EQ(run({"synth-data", "--classes", "3", "--n-per-class", "20", "--format", "json", "--out", js.string()})
                .code,
            0);
  EXPECT_EQ(Json::parse(slurp(js)).size(), 60u);
  EXPECT_EQ(count_lines(slurp(csv)), 61);
  const auto r = run({"probe", "--train", csv.string(), "--eval", bin.string(), "--epochs", "50"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = Json::parse(r.out);
  EXPECT_LE(j["final_train_loss"].get<double>(), j["mean_classifier_train_loss"].get<double>() + 1e-6);
  EXPECT_EQ(j["n_train"], 60);
}

TEST(Cli, FeaturesOutFeedsProbe) {
  const auto prefix = scratch("feat").string();
  const auto r = run({"synth-train", "--K", "2", "--epochs", "2", "--classes", "3", "--n-per-class", "30",
                      "--batch-size", "16", "--features-out", prefix, "--out", scratch("ft.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto p = run({"probe", "--train", prefix + "_seed0_K2_train.csv", "--eval", prefix + "_seed0_K2_test.csv",
                      "--format", "csv"});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(count_lines(p.out), 2);
}

TEST(Cli, ByteIdenticalAcrossThreadCounts) {
  const std::vector<std::vector<std::string>> cmds{
      {"verify", "--suite", "all", "--trials", "3000", "--n-max", "9", "--k-max", "7", "--instances", "40"},
      {"synth-train", "--K", "8", "--epochs", "3", "--classes", "4", "--n-per-class", "60", "--batch-size", "32"},
  };
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    std::string first;
    for (const std::string t : {"1", "2", "5"}) {
      auto args = cmds[i];
      const auto out = scratch("det" + std::to_string(i) + "_" + t);
      args.insert(args.end(), {"--threads", t, "--out", out.string()});
      ASSERT_EQ(run(args).code, 0);
      const auto text = slurp(out);
      if (first.empty()) first = text;
      EXPECT_EQ(text, first) << cmds[i][0] << " threads " << t;
    }
  }
}
