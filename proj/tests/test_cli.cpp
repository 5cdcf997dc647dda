#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scanet/config.hpp"
#include "scanet/corpus.hpp"
#include "scanet/trainer.hpp"
#include "test_util.hpp"

using scanet::testing::read_text;
using scanet::testing::TempDir;
using scanet::testing::write_text;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(const TempDir& dir, const std::string& args) {
  const std::string out = dir.file("stdout.txt"), err = dir.file("stderr.txt");
  const std::string cmd = std::string(SCANET_CLI) + " " + args + " >" + out + " 2>" + err;
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), read_text(out), read_text(err)};
}

void write_inputs(const TempDir& dir, std::size_t steps) {
  write_text(dir.file("spec.json"),
             R"({"seed":3,"n_videos":6,"frames_min":16,"frames_max":20,"feature_dim":8,"scenes_max":3})");
  write_text(dir.file("cfg.json"), R"({"seed":1,"d_model":8,"n_heads":2,"ffn_dim":16,"k":2,"steps_stage1":)" +
                                       std::to_string(steps) + R"(,"steps_stage2":)" + std::to_string(steps) + "}");
}

}  // namespace

TEST(Cli, ComplexityOnFixture) {
  TempDir dir;
  auto r = run(dir, "complexity --corpus " + scanet::testing::data_path("worked_example_corpus.jsonl"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("video_id,alpha,raw_count,n_queries\nv1,2,", 0), 0u) << r.out;
}

TEST(Cli, HelpListsEveryConfigKeyWithDefault) {
  TempDir dir;
  auto r = run(dir, "--help");
  ASSERT_EQ(r.code, 0);
  const auto defaults = scanet::RunConfig{}.to_json();
  for (const auto& f : scanet::config_fields()) {
    const std::string needle = std::string(f.name) + " ";
    const auto at = r.out.find("  " + needle);
    ASSERT_NE(at, std::string::npos) << f.name;
    const auto eol = r.out.find('\n', at);
    EXPECT_NE(r.out.substr(at, eol - at).find(defaults.at(f.name).dump()), std::string::npos) << f.name;
  }
}

TEST(Cli, GenerateIsIdempotent) {
  TempDir dir;
  write_inputs(dir, 0);
  ASSERT_EQ(run(dir, "generate --spec " + dir.file("spec.json") + " --out " + dir.file("a.jsonl")).code, 0);
  ASSERT_EQ(run(dir, "generate --spec " + dir.file("spec.json") + " --out " + dir.file("b.jsonl")).code, 0);
  EXPECT_EQ(read_text(dir.file("a.jsonl")), read_text(dir.file("b.jsonl")));
  EXPECT_EQ(read_text(dir.file("a.jsonl.oracle.json")), read_text(dir.file("b.jsonl.oracle.json")));
}

TEST(Cli, ZeroStepTrainingKeepsInitialization) {
  TempDir dir;
  write_inputs(dir, 0);
  ASSERT_EQ(run(dir, "generate --spec " + dir.file("spec.json") + " --out " + dir.file("c.jsonl")).code, 0);
  auto r = run(dir, "train --corpus " + dir.file("c.jsonl") + " --config " + dir.file("cfg.json") + " --out " +
                        dir.file("run"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto corpus = scanet::load_corpus(dir.file("c.jsonl"));
  const auto init = scanet::init_model(scanet::load_config(dir.file("cfg.json")), corpus);
  EXPECT_EQ(scanet::load_checkpoint(dir.file("run/stage2.ckpt")).store.digest(), init.store.digest());
  EXPECT_EQ(read_text(dir.file("run/stage2.ckpt.bin")), read_text(dir.file("run/init.ckpt.bin")));
  EXPECT_EQ(read_text(dir.file("run/metrics.csv")), "step,stage,l_mqr,l_mvr,l_vid,l_cps,total\n");
  EXPECT_EQ(nlohmann::json::parse(read_text(dir.file("run/config.json"))),
            scanet::load_config(dir.file("cfg.json")).to_json());
}

TEST(Cli, TrainAndEvalTwiceAreByteIdentical) {
  TempDir dir;
  write_inputs(dir, 12);
  ASSERT_EQ(run(dir, "generate --spec " + dir.file("spec.json") + " --out " + dir.file("c.jsonl")).code, 0);
  for (const char* name : {"a", "b"}) {
    const std::string run_dir = dir.file(std::string("run_") + name);
    auto t = run(dir, "train --corpus " + dir.file("c.jsonl") + " --config " + dir.file("cfg.json") + " --out " +
                          run_dir + " --set lr=0.003");
    ASSERT_EQ(t.code, 0) << t.err;
    auto e = run(dir, "eval --corpus " + dir.file("c.jsonl") + " --checkpoint " + run_dir + "/stage2.ckpt --out " +
                          dir.file(std::string("rep_") + name) + " --scenes oracle --oracle " +
                          dir.file("c.jsonl.oracle.json"));
    ASSERT_EQ(e.code, 0) << e.err;
  }
  for (const char* f : {"run_%s/stage1.ckpt.bin", "run_%s/stage2.ckpt", "run_%s/stage2.ckpt.bin", "run_%s/metrics.csv",
                        "run_%s/cache.json", "rep_%s/predictions.csv", "rep_%s/summary.json", "rep_%s/heatmap.csv"}) {
    char a[64], b[64];
    std::snprintf(a, sizeof a, f, "a");
    std::snprintf(b, sizeof b, f, "b");
    const auto ta = read_text(dir.file(a));
    EXPECT_FALSE(ta.empty()) << a;
    EXPECT_EQ(ta, read_text(dir.file(b))) << f;
  }
  // The override reached the run and is recorded in the config copy.
  EXPECT_DOUBLE_EQ(nlohmann::json::parse(read_text(dir.file("run_a/config.json"))).at("lr").get<double>(), 0.003);
  const auto metrics = read_text(dir.file("run_a/metrics.csv"));
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 1 + 24);
}

TEST(Cli, MismatchWritesHeatmap) {
  TempDir dir;
  write_inputs(dir, 0);
  ASSERT_EQ(run(dir, "generate --spec " + dir.file("spec.json") + " --out " + dir.file("c.jsonl")).code, 0);
  ASSERT_EQ(run(dir, "train --corpus " + dir.file("c.jsonl") + " --config " + dir.file("cfg.json") + " --out " +
                         dir.file("run"))
                .code,
            0);
  auto r = run(dir, "mismatch --corpus " + dir.file("c.jsonl") + " --checkpoint " + dir.file("run/stage2.ckpt") +
                        " --strategy window:4/8,2 --scenes gt");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("scenes,proposals,mean_iou,n\n", 0), 0u);
  const auto corpus = scanet::load_corpus(dir.file("c.jsonl"));
  std::size_t total = 0;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) total += std::stoul(line.substr(line.rfind(',') + 1));
  EXPECT_EQ(total, corpus.queries().size());
}

TEST(Cli, ErrorsAreOneMachineParsableLine) {
  TempDir dir;
  write_inputs(dir, 0);
  write_text(dir.file("bad.jsonl"), "{\"video\": {\"id\": \"v1\", \"duration\": 3.0}}\n");
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"complexity --corpus " + dir.file("missing.jsonl"), "error: io: "},
      {"complexity --corpus " + dir.file("bad.jsonl"), "error: parse: "},
      {"train --corpus " + dir.file("bad.jsonl") + " --config " + dir.file("cfg.json") + " --out " + dir.file("r") +
           " --set nope=1",
       "error: config: "},
      {"eval --corpus x --checkpoint " + dir.file("cfg.json") + " --out " + dir.file("r"), "error: checkpoint: "},
      {"mismatch --corpus x --checkpoint y --strategy grid", "error: "},
      {"", "error: usage: "},
  };
  for (const auto& [args, prefix] : cases) {
    auto r = run(dir, args);
    EXPECT_NE(r.code, 0) << args;
    EXPECT_EQ(r.err.rfind(prefix, 0), 0u) << args << " -> " << r.err;
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  }
}
