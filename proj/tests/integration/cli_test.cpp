// SPDX-License-Identifier: Apache-2.0
//
// Drives the rge executable end to end on a tiny configuration.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>

#include "rge/dataset_io.hpp"
#include "rge/retrieval.hpp"

namespace rge {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string out;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fs::temp_directory_path() / ("rge_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root);
    fs::create_directories(root);
  }
  void TearDown() override { fs::remove_all(root); }

  /// Runs rge with the tiny settings; stderr goes to err.txt under the root.
  Outcome rge(const std::string& args) const {
    const std::string tiny =
        " --root " + root.string() + " --precision double -q --set data.n_train=24 --set data.n_eval=12"
        " --set model.d_model=16 --set model.n_heads=2 --set model.d_ff=32 --set model.n_layers=1"
        " --set train.cold_start_steps=3 --set train.batch_size=4 --set experiment.n_seeds=1";
    const std::string cmd = std::string(RGE_CLI_PATH) + tiny + " " + args + " 2>" + (root / "err.txt").string();
    Outcome o;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return o;
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) o.out.append(buf, n);
    const int status = ::pclose(pipe);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
  }
  std::string err() const { return read_file(root / "err.txt"); }

  fs::path root;
};

TEST_F(CliTest, KeysAndShowConfigSucceed) {
  const auto keys = rge("keys");
  EXPECT_EQ(keys.code, 0);
  EXPECT_NE(keys.out.find("train.tau\n"), std::string::npos);
  const auto show = rge("show-config --seed 9");
  EXPECT_EQ(show.code, 0);
  EXPECT_NE(show.out.find("run.seed = 9"), std::string::npos);
  EXPECT_NE(show.out.find("# fingerprint "), std::string::npos);
}

TEST_F(CliTest, ConfigErrorsExitOne) {
  EXPECT_EQ(rge("show-config --set model.d_moddel=3").code, 1);
  EXPECT_NE(err().find("d_moddel"), std::string::npos);
  EXPECT_EQ(rge("--no-such-flag").code, 1);
  EXPECT_EQ(rge("cold-start").code, 1);
  EXPECT_NE(err().find("gen-data"), std::string::npos) << err();
}

TEST_F(CliTest, EmptyTrainingSplitIsAllowedWithAWarning) {
  const auto r = rge("gen-data --n-train 0 --out " + (root / "data").string());
  EXPECT_EQ(r.code, 0) << err();
  EXPECT_NE(err().find("warning"), std::string::npos);
  EXPECT_NE(r.out.find("train 0 examples"), std::string::npos) << r.out;
  EXPECT_EQ(std::ranges::count(read_file(root / "data" / "train.jsonl"), '\n'), 1);
}

TEST_F(CliTest, StagesEmbedAndReport) {
  ASSERT_EQ(rge("gen-data").code, 0) << err();
  ASSERT_EQ(rge("cold-start").code, 0) << err();
  write_file(root / "seqs.txt", "SCENE_BEGIN circle red small OBJ_SEP square blue large SELECT square\n");
  const auto direct = rge("embed --model cold-start --mode direct --input " + (root / "seqs.txt").string());
  const auto reasoning = rge("embed --model cold-start --mode reasoning --input " + (root / "seqs.txt").string());
  ASSERT_EQ(direct.code, 0) << err();
  ASSERT_EQ(reasoning.code, 0) << err();
  EXPECT_EQ(std::ranges::count(direct.out, '\n'), 1);
  EXPECT_EQ(std::ranges::count(direct.out, ' '), 15);
  EXPECT_NE(direct.out, reasoning.out);

  EXPECT_EQ(rge("embed --model cold-start --input " + (root / "missing.txt").string()).code, 3);

  ASSERT_EQ(rge("compare").code, 0) << err();
  const auto report = rge("report");
  ASSERT_EQ(report.code, 0) << err();
  fs::path table;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    const auto name = e.path().filename().string();
    if (name.starts_with("supervision_comparison_") && name.ends_with(".md")) table = e.path();
  }
  ASSERT_FALSE(table.empty()) << report.out;
  EXPECT_EQ(parse_markdown_numbers(read_file(table)).size(), 3u);
}

TEST_F(CliTest, DivergentTrainingExitsTwo) {
  // The learning rate is part of the fingerprint, so every stage carries it.
  const std::string lr = " --set train.learning_rate=1e30";
  ASSERT_EQ(rge("gen-data" + lr).code, 0) << err();
  ASSERT_EQ(rge("cold-start" + lr).code, 0) << err();
  EXPECT_EQ(rge("train --mode baseline" + lr).code, 2) << err();
}

}  // namespace
}  // namespace rge
