#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "test_util.hpp"

using nlohmann::json;
using trix::testing::slurp;
using trix::testing::TempDir;

namespace {

const std::string kSamples = TRIX_SAMPLES_DIR;

struct Run {
  int code;
  std::string out;
};

// Runs the CLI with `args`, capturing stdout; stderr is discarded.
Run run(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const std::string cmd = std::string("\"") + TRIX_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out)};
}

std::string train_args(const TempDir& dir, const std::string& out) {
  return "--deterministic train --config " + kSamples + "/toy.json --dataset " + kSamples +
         "/toy_inductive --eval-dataset " + kSamples + "/toy_inductive --epochs 2 --steps-per-epoch 6 --seed 0 --output " +
         (dir / out).string();
}

}  // namespace

TEST(Cli, StatsOnSingleTriple) {
  TempDir dir;
  const auto r = run(dir, "stats " + kSamples + "/single");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("single\t2\t1\t1"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("alpha"), std::string::npos);
}

TEST(Cli, UsageAndInputErrorsExitTwo) {
  TempDir dir;
  EXPECT_EQ(run(dir, "stats " + (dir / "does_not_exist").string()).code, 2);
  EXPECT_EQ(run(dir, "").code, 2);
  EXPECT_EQ(run(dir, "frobnicate").code, 2);
  EXPECT_EQ(run(dir, "finetune --dataset " + kSamples + "/toy --output " + (dir / "o").string()).code, 2);
  dir.write("bad.json", R"({"model": {"hidden_dims": 4}})");
  EXPECT_EQ(run(dir, "train --config " + (dir / "bad.json").string() + " --dataset " + kSamples +
                         "/toy --output " + (dir / "o").string())
                .code,
            2);
  EXPECT_EQ(run(dir, "train --dataset " + kSamples + "/toy").code, 2);
}

TEST(Cli, TrainIsDeterministicAndEvalReadsTheCheckpoint) {
  TempDir dir;
  ASSERT_EQ(run(dir, train_args(dir, "a")).code, 0);
  ASSERT_EQ(run(dir, train_args(dir, "b")).code, 0);
  for (const char* f : {"checkpoint.bin", "metrics.jsonl"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  EXPECT_FALSE(slurp(dir / "a" / "checkpoint.bin").empty());

  const json report = json::parse(slurp(dir / "a" / "report.json"));
  EXPECT_EQ(report["epochs_run"], 2);
  EXPECT_TRUE(report["eval"]["metrics"].contains("filtered/mean"));
  const json cfg = json::parse(slurp(dir / "a" / "config.json"));
  EXPECT_EQ(cfg["train"]["steps_per_epoch"], 6);
  EXPECT_EQ(cfg["model"]["hidden_dim"], 16);

  std::size_t lines = 0;
  for (char c : slurp(dir / "a" / "metrics.jsonl")) lines += c == '\n';
  EXPECT_EQ(lines, 2u);

  const std::string ckpt = (dir / "a" / "checkpoint.bin").string();
  const auto ev = run(dir, "eval --checkpoint " + ckpt + " --dataset " + kSamples + "/toy_inductive --task entity --ranks " +
                               (dir / "ranks.tsv").string());
  ASSERT_EQ(ev.code, 0);
  const json ej = json::parse(ev.out);
  const auto& m = ej["metrics"]["filtered/mean"];
  EXPECT_TRUE(m.contains("mrr"));
  EXPECT_TRUE(m.contains("hits@10"));
  EXPECT_GT(m["mrr"].get<double>(), 0.0);
  EXPECT_EQ(slurp(dir / "ranks.tsv").rfind("head\trelation\ttail", 0), 0u);

  const auto rel = run(dir, "eval --checkpoint " + ckpt + " --dataset " + kSamples + "/toy_inductive --task relation");
  ASSERT_EQ(rel.code, 0);
  EXPECT_TRUE(json::parse(rel.out)["metrics"].contains("filtered/relation"));

  const auto ft = run(dir, "--deterministic finetune --checkpoint " + ckpt + " --dataset " + kSamples +
                               "/toy --epochs 1 --steps-per-epoch 2 --output " + (dir / "ft").string());
  ASSERT_EQ(ft.code, 0);
  EXPECT_EQ(json::parse(slurp(dir / "ft" / "report.json"))["command"], "finetune");

  ASSERT_EQ(run(dir, "export-sim --checkpoint " + ckpt + " --dataset " + kSamples + "/toy --out " +
                         (dir / "sim.csv").string())
                .code,
            0);
  EXPECT_EQ(slurp(dir / "sim.csv").rfind("relation,", 0), 0u);
}

TEST(Cli, ThreadCountDoesNotChangeTraining) {
  TempDir dir;
  const std::string base = "train --dataset " + kSamples + "/toy --epochs 1 --steps-per-epoch 4 --seed 3 --output ";
  ASSERT_EQ(run(dir, "--threads 1 " + base + (dir / "one").string()).code, 0);
  ASSERT_EQ(run(dir, "--threads 4 " + base + (dir / "four").string()).code, 0);
  EXPECT_EQ(slurp(dir / "one" / "checkpoint.bin"), slurp(dir / "four" / "checkpoint.bin"));
}

TEST(Cli, ExpressivityAndGradcheckReports) {
  TempDir dir;
  const auto ex = run(dir, "expressivity --seeds 3 --output " + (dir / "ex").string());
  ASSERT_EQ(ex.code, 0);
  const json j = json::parse(ex.out);
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_EQ(j["separation"].size(), 2u);
  EXPECT_EQ(json::parse(slurp(dir / "ex" / "report.json")), j);

  const auto gc = run(dir, "gradcheck --seeds 1 --hidden-dim 3");
  ASSERT_EQ(gc.code, 0);
  EXPECT_TRUE(json::parse(gc.out)["passed"].get<bool>());
}
