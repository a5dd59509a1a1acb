#include "ntpbias/cli.hpp"
#include "ntpbias/corpus.hpp"
#include "ntpbias/io.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace ntpbias;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ntpbias_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string at(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

Json last_line(const std::string& s) {
  std::istringstream in(s);
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
  }
  return Json::parse(last);
}

}  // namespace

TEST_F(Cli, AnalyzeOneHotPair) {
  write_file(at("t.json"), table_to_json(fixture::one_hot_pair()).dump());
  const auto r = run({"analyze", "--table", at("t.json")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const Json j = last_line(r.out);
  EXPECT_EQ(j["separable"], true);
  EXPECT_EQ(j["dim_f"], 0);
  EXPECT_EQ(j["compatible"], true);
}

TEST_F(Cli, ErrorsAreJsonWithExitCodes) {
  auto r = run({"analyze", "--table", at("missing.json")});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_EQ(last_line(r.err)["error"]["type"], "input");

  r = run({"analyze"});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_TRUE(last_line(r.err)["error"]["message"].get<std::string>().find("--table") != std::string::npos);

  r = run({"frobnicate"});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_EQ(last_line(r.err)["error"]["type"], "usage");

  write_file(at("cfg.json"), R"({"itres": 5})");
  r = run({"train", "--config", at("cfg.json"), "--table", at("t.json")});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_TRUE(r.err.find("itres") != std::string::npos);

  r = run({"train", "--iters", "many", "--table", at("t.json")});
  EXPECT_EQ(r.code, cli::kUsage);

  r = run({"generate", "--preset", "nope"});
  EXPECT_EQ(r.code, cli::kUsage);

  r = run({"generate", "--vocab", "4", "--support", "4", "--out-corpus", at("c.jsonl"), "--out-table", at("g.json")});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_EQ(last_line(r.err)["error"]["type"], "invalid_argument");
}

TEST_F(Cli, GenerateAppA) {
  const auto r = run({"generate", "--preset", "appA", "--seed", "7", "--out-corpus", at("c.jsonl"), "--out-table",
                      at("g.json")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const Corpus c = corpus_from_jsonl(read_file(at("c.jsonl")));
  EXPECT_EQ(c.sequences.size(), 5000u);
  EXPECT_EQ(c.vocab_size, 10);
  const auto t = table_from_json(Json::parse(read_file(at("g.json"))));
  EXPECT_EQ(t.num_contexts(), 50);
  EXPECT_EQ(t.embed_dim, 60);
  EXPECT_EQ(last_line(r.out)["sequences"], 5000);
}

TEST_F(Cli, FlagsOverrideConfigOverridePreset) {
  write_file(at("cfg.json"), R"({"contexts": 4, "dim": 5, "vocab": 6, "samples": 200})");
  const auto r = run({"generate", "--preset", "appA", "--config", at("cfg.json"), "--dim", "7", "--support", "2",
                      "--out-corpus", at("c.jsonl"), "--out-table", at("g.json")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const Json g = Json::parse(read_file(at("g.json")));
  const auto t = table_from_json(g);
  EXPECT_EQ(t.num_contexts(), 4);   // config over preset
  EXPECT_EQ(t.embed_dim, 7);        // flag over config
  EXPECT_EQ(t.vocab_size, 6);
  EXPECT_EQ(g["meta"]["config"]["samples"], 200);
  EXPECT_EQ(g["meta"]["config"]["embed_std"], 1.0);  // preset value survives
  EXPECT_EQ(g["meta"]["config"]["preset"], "appA");
}

TEST_F(Cli, SmallPipelineIsDeterministic) {
  auto once = [&](const std::string& sub) {
    const auto r = run({"pipeline", "--preset", "fig1-2d", "--seed", "3", "--iters", "300", "--bounds", "1,2,4",
                        "--out-dir", at(sub)});
    EXPECT_NE(r.code, cli::kUsage) << r.err;
    EXPECT_NE(r.code, cli::kFailure) << r.err;
    return r;
  };
  const auto a = once("a");
  const auto b = once("b");
  EXPECT_EQ(a.code, b.code);
  for (const char* f : {"trace.csv", "regpath.csv"}) {
    EXPECT_EQ(read_file(at(std::string("a/") + f)), read_file(at(std::string("b/") + f))) << f;
  }
  // JSON outputs differ only in the paths recorded under meta
  for (const char* f : {"table.json", "solution.json", "analysis.json"}) {
    Json ja = Json::parse(read_file(at(std::string("a/") + f)));
    Json jb = Json::parse(read_file(at(std::string("b/") + f)));
    ja.erase("meta");
    jb.erase("meta");
    EXPECT_EQ(ja.dump(), jb.dump()) << f;
  }
  const Json rep = Json::parse(read_file(at("a/report/report.json")));
  EXPECT_TRUE(rep.contains("checks"));
  EXPECT_TRUE(fs::exists(at("a/train.json")));
}

TEST_F(Cli, TrainThenReport) {
  write_file(at("t.json"), table_to_json(random_table(4, 8, 5, 2, 3)).dump());
  auto r = run({"train", "--table", at("t.json"), "--eta", "0.2", "--iters", "500", "--out", at("trace.csv")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const Json meta = Json::parse(read_file(at("trace.csv.meta.json")));
  EXPECT_EQ(meta["resolved_train_config"]["eta"], 0.2);
  EXPECT_EQ(decoder_from_json(meta["final_W"]).rows(), 5);
  EXPECT_EQ(trace_from_csv(read_file(at("trace.csv"))).back().iter, 500);

  r = run({"regpath", "--table", at("t.json"), "--bounds", "1,2", "--out", at("rp.csv")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_EQ(regpath_from_csv(read_file(at("rp.csv"))).size(), 2u);

  r = run({"report", "--table", at("t.json"), "--regpath", at("rp.csv"), "--out-dir", at("rep")});
  EXPECT_TRUE(r.code == cli::kOk || r.code == cli::kInvariantFailed) << r.err;
  EXPECT_TRUE(fs::exists(at("rep/report.json")));
  const Json basis = Json::parse(read_file(at("rep/basis.json")));
  EXPECT_EQ(basis["basis"].size(), last_line(r.out)["summary"]["dim_f"].get<std::size_t>());
}
