#include <gtest/gtest.h>

#include <fstream>
#include <map>

#include "cli.hpp"
#include "nlohmann/json.hpp"
#include "test_support.hpp"

namespace kbqa {
namespace {

namespace fs = std::filesystem;

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = testing::read_file(e.path());
    else out[fs::relative(e.path(), root).string()] = "<dir>";
  return out;
}

struct Captured {
  int code;
  std::string out;
  std::string err;
};

Captured run_cli(std::vector<std::string> args) {
  ::testing::internal::CaptureStdout();
  ::testing::internal::CaptureStderr();
  const int code = cli::run(args);
  Captured c{code, ::testing::internal::GetCapturedStdout(), ::testing::internal::GetCapturedStderr()};
  return c;
}

// Runs inside an empty working directory so stray relative writes show up.
struct CliTest : ::testing::Test {
  fs::path root = testing::temp_dir("cli");
  fs::path old_cwd = fs::current_path();
  void SetUp() override { fs::current_path(root); }
  void TearDown() override { fs::current_path(old_cwd); }

  fs::path gen(const std::string& name, std::vector<std::string> extra = {}) {
    std::vector<std::string> a{"gen-data", "--seed", "3", "--bags", "60", "--entities", "20", "--out",
                               (root / name).string()};
    a.insert(a.end(), extra.begin(), extra.end());
    auto r = run_cli(a);
    EXPECT_EQ(r.code, cli::kExitOk) << r.err;
    return root / name;
  }
};

TEST_F(CliTest, HelpAndVersionSucceed) {
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  EXPECT_EQ(run_cli({"train", "--help"}).code, 0);
  EXPECT_EQ(run_cli({"--version"}).code, 0);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"gen-data", "--out", "x", "--bogus"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"gen-data"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"train", "--data", "d", "--out", "o", "--loss", "mle"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"gen-data", "--out", "x", "--p-irrelevant", "1.5"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"train", "--data", "d", "--out", "o", "--dims", "8,8"}).code, cli::kExitUsage);
  EXPECT_TRUE(fs::is_empty(root));
}

TEST_F(CliTest, DataErrorsExitOneAndNameTheBag) {
  auto data = gen("data");
  {
    std::ofstream f(data / "train.jsonl", std::ios::app);
    f << R"({"bag_id": 4242, "question": "who is it", "answers": 3})" << "\n";
  }
  auto r = run_cli({"train", "--data", data.string(), "--epochs", "1", "--out", (root / "run").string()});
  EXPECT_EQ(r.code, cli::kExitDataError);
  EXPECT_NE(r.err.find("4242"), std::string::npos) << r.err;

  r = run_cli({"inspect-bag", "--data", (root / "missing").string(), "--id", "1"});
  EXPECT_EQ(r.code, cli::kExitDataError);
}

TEST_F(CliTest, InspectBagListsWeightsAndMentions) {
  auto data = gen("data");
  auto r = run_cli({"inspect-bag", "--data", data.string(), "--id", "7"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* s : {"question:", "answers (KB weight", "C=", "mention [", "<irrelevant>"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s << "\n" << r.out;
  r = run_cli({"inspect-bag", "--data", data.string(), "--id", "999999"});
  EXPECT_EQ(r.code, cli::kExitDataError);
}

TEST_F(CliTest, PipelineWritesManifestsOnlyUnderOut) {
  auto data = gen("data");
  const auto before = snapshot(data);
  const auto ckpt = (root / "run" / "best.ckpt").string();
  auto r = run_cli({"train", "--data", data.string(), "--loss", "wgt", "--dims", "8,8,16", "--epochs", "2", "--out",
                    (root / "run").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli({"eval", "--data", data.string(), "--checkpoint", ckpt, "--bootstrap", "50", "--out",
               (root / "ev").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli({"predict", "--data", data.string(), "--checkpoint", ckpt, "--out", (root / "pr").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli({"weigh", "--data", data.string(), "--out", (root / "w").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli({"inspect-bag", "--data", data.string(), "--id", "7", "--out", (root / "ib").string()});
  ASSERT_EQ(r.code, 0) << r.err;

  EXPECT_EQ(snapshot(data), before);
  std::set<std::string> top;
  for (const auto& e : fs::directory_iterator(root)) top.insert(e.path().filename().string());
  EXPECT_EQ(top, (std::set<std::string>{"data", "run", "ev", "pr", "w", "ib"}));
  for (const char* d : {"data", "run", "ev", "pr", "w", "ib"}) {
    ASSERT_TRUE(fs::exists(root / d / "manifest.json")) << d;
    auto m = nlohmann::json::parse(testing::read_file(root / d / "manifest.json"));
    EXPECT_TRUE(m.contains("command")) << d;
  }
  EXPECT_TRUE(fs::exists(root / "ev" / "report.jsonl"));
  EXPECT_TRUE(fs::exists(root / "pr" / "predictions.jsonl"));
  EXPECT_TRUE(fs::exists(root / "w" / "weights.jsonl"));

  r = run_cli({"train", "--data", data.string(), "--loss", "wgt", "--weights", (root / "w" / "weights.jsonl").string(),
               "--dims", "8,8,16", "--epochs", "1", "--out", (root / "run2").string()});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(CliTest, TrainTwiceIsByteIdentical) {
  auto data = gen("data");
  for (const char* o : {"a", "b"}) {
    auto r = run_cli({"train", "--data", data.string(), "--loss", "sel", "--dims", "8,8,16", "--epochs", "2", "--out",
                      (root / o).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"metrics.jsonl", "best.ckpt", "last.ckpt"})
    EXPECT_EQ(testing::read_file(root / "a" / f), testing::read_file(root / "b" / f)) << f;
}

TEST_F(CliTest, AblateNoiseFreeKeepsSystemsClose) {
  auto data = gen("clean", {"--p-irrelevant", "0", "--p-inconsistent", "0"});
  auto r = run_cli({"ablate", "--data", data.string(), "--systems", "nll,sel,wgt-kb", "--seeds", "1", "--dims",
                    "8,8,16", "--epochs", "2", "--out", (root / "ab").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root / "ab" / "table.md"));
  EXPECT_TRUE(fs::exists(root / "ab" / "manifest.json"));
  std::ifstream f(root / "ab" / "results.jsonl");
  int n = 0;
  for (std::string line; std::getline(f, line);) n += !line.empty();
  EXPECT_GE(n, 3);
}

}  // namespace
}  // namespace kbqa
