// Copyright 2026 The DIFE Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Drives the command-line binary end to end.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult invoke(const std::string& args) {
  const std::string cmd = std::string(DIFE_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "dife_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    const CliResult g = invoke("generate --out " + (root_ / "data").string() + " --count 20 --seed 7");
    ASSERT_EQ(g.code, 0) << g.out;
    std::ofstream cfg(root_ / "tiny.cfg");
    cfg << "# tiny run\n"
        << "train.seed = 5\n"
        << "net.stage_channels = [4,8,8]\n"
        << "train.epochs = 3\n"
        << "train.warmup_epochs = 1\n"
        << "train.batch_size = 4\n"
        << "train.lr0 = 0.02\n"
        << "data.root = " << (root_ / "data").string() << "\n";
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string cfg() { return (root_ / "tiny.cfg").string(); }
  static std::string out(const std::string& name) {
    return "--set output.dir=" + (root_ / name).string();
  }

  static fs::path root_;
};

fs::path CliTest::root_;

TEST_F(CliTest, GenerateIsDeterministic) {
  const fs::path again = root_ / "data_again";
  ASSERT_EQ(invoke("generate --out " + again.string() + " --count 20 --seed 7").code, 0);
  EXPECT_EQ(tree(root_ / "data"), tree(again));
}

TEST_F(CliTest, GenerateRejectsZeroCountAndNonEmptyDir) {
  EXPECT_EQ(invoke("generate --out " + (root_ / "z").string() + " --count 0 --seed 1").code, 2);
  const CliResult r = invoke("generate --out " + (root_ / "data").string() + " --count 20 --seed 7");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("--force"), std::string::npos);
}

TEST_F(CliTest, ManifestRowsMatchAllocation) {
  // 2 domains x (16 + 2 + 2) samples plus the header.
  EXPECT_EQ(count_lines(root_ / "data" / "manifest.csv"), 41);
}

TEST_F(CliTest, UnknownKeyExitsTwoNamingIt) {
  const CliResult r = invoke("train --config " + cfg() + " --set net.lambda9=1 " + out("bad"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("net.lambda9"), std::string::npos);
}

TEST_F(CliTest, MissingSeedExitsTwo) {
  std::ofstream(root_ / "noseed.cfg") << "train.epochs = 1\n";
  EXPECT_EQ(invoke("train --config " + (root_ / "noseed.cfg").string()).code, 2);
}

TEST_F(CliTest, NonFiniteLossExitsThree) {
  const CliResult r = invoke("train --config " + cfg() + " --set lr0=1e300 " +
                    out("diverge"));
  EXPECT_EQ(r.code, 3) << r.out;
}

TEST_F(CliTest, TrainIsReproducibleAndEchoesConfig) {
  const CliResult a = invoke("train --config " + cfg() + " --set net.snr_stages=[2,3] --set net.isw_stages=[1,2,3] " + out("run_a"));
  ASSERT_EQ(a.code, 0) << a.out;
  const CliResult b = invoke("train --config " + cfg() + " --set net.snr_stages=[2,3] --set net.isw_stages=[1,2,3] " + out("run_b"));
  ASSERT_EQ(b.code, 0) << b.out;
  EXPECT_NE(a.out.find("net.snr_stages = [2,3]"), std::string::npos);
  EXPECT_NE(a.out.find("net.isw_stages = [1,2,3]"), std::string::npos);
  EXPECT_NE(a.out.find("final val mIoU"), std::string::npos);
  EXPECT_EQ(slurp(root_ / "run_a" / "model.ckpt"), slurp(root_ / "run_b" / "model.ckpt"));
  EXPECT_EQ(slurp(root_ / "run_a" / "train_log.csv"), slurp(root_ / "run_b" / "train_log.csv"));
  EXPECT_TRUE(fs::exists(root_ / "run_a" / "isw_mask_stage1.csv"));
  const std::string resolved = slurp(root_ / "run_a" / "config.resolved");
  EXPECT_NE(resolved.find("train.seed = 5"), std::string::npos);
}

TEST_F(CliTest, ZeroWeightsTrainBaseline) {
  const CliResult r = invoke("train --config " + cfg() +
                    " --set lambda1=0 --set lambda2=0 --set snr_stages=[] --set isw_stages=[] " +
                    out("base"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_FALSE(fs::exists(root_ / "base" / "isw_mask_stage1.csv"));
}

TEST_F(CliTest, EvalIsRepeatableAndChecksShapes) {
  ASSERT_EQ(invoke("train --config " + cfg() + " " + out("ev")).code, 0);
  const std::string ckpt = (root_ / "ev" / "model.ckpt").string();
  const std::string data = (root_ / "data").string();
  const CliResult a = invoke("eval --checkpoint " + ckpt + " --data " + data +
                    " --domain target --out " + (root_ / "ev1").string());
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_NE(a.out.find("mIoU"), std::string::npos);
  EXPECT_NE(a.out.find("mDSC"), std::string::npos);
  ASSERT_EQ(invoke("eval --checkpoint " + ckpt + " --data " + data +
                " --domain target --out " + (root_ / "ev2").string())
                .code,
            0);
  EXPECT_EQ(tree(root_ / "ev1"), tree(root_ / "ev2"));
  EXPECT_EQ(count_lines(root_ / "ev1" / "summary.csv"), 2);

  const CliResult bad = invoke("eval --checkpoint " + ckpt + " --data " + data +
                      " --set num_classes=5 --out " + (root_ / "ev3").string());
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.out.find("shape"), std::string::npos);
}

TEST_F(CliTest, AblateDcLossEmitsFourRows) {
  const CliResult r = invoke("ablate --config " + cfg() + " --set epochs=1 --axis dcloss " + out("abl"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(count_lines(root_ / "abl" / "ablation.csv"), 5);
  EXPECT_TRUE(fs::exists(root_ / "abl" / "ttest.csv"));
  EXPECT_EQ(invoke("ablate --config " + cfg() + " --axis depth").code, 2);
}

TEST_F(CliTest, GradcheckPassesAndCatchesInjectedFault) {
  const CliResult ok = invoke("gradcheck --module snr --seeds 2");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("max_rel_err"), std::string::npos);
  const CliResult bad = invoke("gradcheck --module ops --seeds 1 --inject-fault sigmoid");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("failed: ops.sigmoid"), std::string::npos);
}

TEST_F(CliTest, HelpDocumentsExitCodes) {
  const CliResult r = invoke("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("numerical failure"), std::string::npos);
  EXPECT_NE(r.out.find("config"), std::string::npos);
}

}  // namespace
