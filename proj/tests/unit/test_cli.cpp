#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cvs/checkpoint.hpp"
#include "cvs/cli.hpp"
#include "cvs/cost_analysis.hpp"
#include "cvs/evaluation.hpp"
#include "cvs/training.hpp"
#include "test_util.hpp"

using namespace cvs;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

const std::vector<std::string> kTiny = {"--dataset",   "synthetic-shapes", "--train-size", "24", "--test-size", "9",
                                        "--wrn-depth", "10",               "--wrn-width",  "1",  "--epochs",    "2"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail = kTiny) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({"train", "--help"}).code, 0);
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"train", "--epochs", "many"}).code, 2);
  EXPECT_EQ(cli(with({"train", "--m", "0"})).code, 2);
  EXPECT_EQ(cli(with({"train", "--m", "3x"})).code, 2);
  EXPECT_EQ(cli(with({"train", "--lr", "-1"})).code, 2);
  EXPECT_EQ(cli({"prepare-labels", "--mode", "propagate"}).code, 2);
  EXPECT_EQ(cli({"prepare-labels", "--mode", "paint"}).code, 2);
  EXPECT_EQ(cli({"evaluate"}).code, 2);
  EXPECT_EQ(cli({"cost-report", "--results", "/no/such/file", "-o", "x"}).code, 2);
}

TEST(Cli, MissingDataIsAUsageError) {
  test::TempDir dir("cli-missing");
  const auto r = cli({"train", "--dataset", "mnist", "--data-root", (dir / "none").string(), "-o", (dir / "o").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error"), std::string::npos);
}

TEST(Cli, TrainEvaluateAndResume) {
  test::TempDir dir("cli-train");
  const auto out = (dir / "run").string();
  auto r = cli(with({"train", "--m", "4", "--method", "multitask", "-o", out}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("epochs=2"), std::string::npos);
  EXPECT_TRUE(checkpoint_exists(out));
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "metrics.tsv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "config.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "train_info.json"));

  const auto resumed = cli(with({"train", "--m", "4", "--method", "multitask", "--resume", "-o", out}));
  EXPECT_EQ(resumed.code, 0) << resumed.err;
  const auto other = cli(with({"train", "--m", "5", "--method", "multitask", "--resume", "-o", out}));
  EXPECT_EQ(other.code, 2) << "resume with a different config must be refused";

  r = cli(with({"evaluate", "--checkpoint", out, "-o", (dir / "eval").string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("top1="), std::string::npos);
  const auto reports = parse_results_table(read_text_file(dir / "eval" / "report.tsv"));
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_EQ(reports[0].method, "multitask");
  EXPECT_TRUE(reports[0].mean_iou);
}

TEST(Cli, DeterministicMetricLogs) {
  test::TempDir dir("cli-det");
  for (const char* o : {"a", "b"}) ASSERT_EQ(cli(with({"train", "--m", "4", "-o", (dir / o).string()})).code, 0);
  EXPECT_EQ(read_text_file(dir / "a" / "metrics.tsv"), read_text_file(dir / "b" / "metrics.tsv"));
}

TEST(Cli, SegModelPropagationAndGrid) {
  test::TempDir dir("cli-grid");
  const auto seg = (dir / "seg").string();
  auto r = cli(with({"train-seg", "--m", "2", "-o", seg}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("model_id=seg-2"), std::string::npos);

  r = cli(with({"propagate", "--seg-model", seg, "--keep-manual-masks", "false", "-o", (dir / "prop").string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("num_propagated=24"), std::string::npos);
  const auto records = read_manifest(dir / "prop" / "manifest.tsv");
  EXPECT_EQ(records.size(), 24u);
  for (const auto& rec : records) EXPECT_TRUE(rec.mask_path);

  r = cli(with({"prepare-labels", "--mode", "binarize", "--split", "test", "--dataset", "mnist-like", "-o",
                (dir / "bin").string()},
               {}));
  EXPECT_EQ(r.code, 2) << "unknown dataset without a manifest";

  const auto grid = (dir / "grid").string();
  r = cli(with({"grid", "--methods", "cvs", "classification", "--ms", "1", "2", "--seeds", "0", "1", "-o", grid}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto reports = parse_results_table(read_text_file(dir / "grid" / "results.tsv"));
  EXPECT_EQ(reports.size(), 8u);
  EXPECT_TRUE(std::filesystem::exists(dir / "grid" / "results_mean.tsv"));

  r = cli({"cost-report", "--results", (dir / "grid" / "results.tsv").string(), "--dataset", "cifar10", "-o",
           (dir / "cost.tsv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = parse_cost_rows(read_text_file(dir / "cost.tsv"));
  EXPECT_EQ(rows.size(), 8u);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LE(rows[i - 1].seconds, rows[i].seconds);
}

TEST(Cli, KFoldGrid) {
  test::TempDir dir("cli-kfold");
  const auto r = cli(with({"grid", "--methods", "cvs", "--kfold", "3", "--seeds", "0", "-o", (dir / "k").string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(parse_results_table(read_text_file(dir / "k" / "results.tsv")).size(), 3u);
}

TEST(Cli, ConfigFileWithFlagOverrides) {
  test::TempDir dir("cli-config");
  std::ofstream(dir / "c.json") << R"({"train": {"epochs": 1, "method": "classification"}, "subset": {"m": 3}})";
  auto r = cli(with({"train", "--config", (dir / "c.json").string(), "-o", (dir / "o").string()},
                    {"--dataset", "synthetic-shapes", "--train-size", "24", "--wrn-depth", "10", "--wrn-width", "1"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("method=classification"), std::string::npos);
  EXPECT_NE(r.out.find("epochs=1"), std::string::npos);
  std::ofstream(dir / "bad.json") << R"({"train": {"epochz": 1}})";
  EXPECT_EQ(cli({"train", "--config", (dir / "bad.json").string()}).code, 2);
  std::ofstream(dir / "broken.json") << "{";
  EXPECT_EQ(cli({"train", "--config", (dir / "broken.json").string()}).code, 2);
}
