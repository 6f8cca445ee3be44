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

// Command-line front end. Links only against the C API in dife/dife.h.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dife/dife.h"

namespace {

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  1  gradient check failed\n"
    "  2  usage, config or data error (including checkpoint shape mismatch)\n"
    "  3  numerical failure (non-finite loss or gradient)\n"
    "  4  internal error";

int fail(dife_status status) {
  std::fprintf(stderr, "dife: %s\n", dife_last_error());
  return static_cast<int>(status);
}

void print_line(const char* line, void*) { std::printf("%s\n", line); }

struct ConfigHandle {
  dife_config* cfg = nullptr;
  ~ConfigHandle() { dife_config_free(cfg); }
};

// Config file (optional for eval) followed by --set overrides in order.
dife_status build_config(const std::string& path, const std::vector<std::string>& sets,
                         ConfigHandle& out) {
  dife_status st = path.empty() ? dife_config_new(&out.cfg)
                                : dife_config_load(path.c_str(), &out.cfg);
  if (st != DIFE_OK) return st;
  for (const std::string& s : sets) {
    st = dife_config_assign(out.cfg, s.c_str());
    if (st != DIFE_OK) return st;
  }
  return DIFE_OK;
}

bool parse_size(const std::string& text, int& h, int& w) {
  const auto x = text.find('x');
  if (x == std::string::npos) return false;
  try {
    std::size_t a = 0;
    std::size_t b = 0;
    h = std::stoi(text.substr(0, x), &a);
    w = std::stoi(text.substr(x + 1), &b);
    return a == x && b == text.size() - x - 1;
  } catch (const std::exception&) {
    return false;
  }
}

int workers_from_env() {
  const char* env = std::getenv("DIFE_THREADS");
  if (env == nullptr) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-invariant segmentation: generate, train, eval, ablate, gradcheck"};
  app.footer(kExitCodes);
  app.require_subcommand(1);
  app.set_version_flag("--version", dife_version());

  std::string gen_out;
  int gen_count = 0;
  std::uint64_t gen_seed = 0;
  std::string gen_size = "32x32";
  bool gen_force = false;
  auto* gen = app.add_subcommand("generate", "Write the two-domain synthetic dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", gen_count, "Samples per domain")
      ->required()
      ->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Dataset seed")->required();
  gen->add_option("--size", gen_size, "Image size HxW")->capture_default_str();
  gen->add_flag("--force", gen_force, "Replace a non-empty output directory");

  std::string train_cfg;
  std::vector<std::string> train_sets;
  auto* train = app.add_subcommand("train", "Train on the source domain");
  train->add_option("--config", train_cfg, "Config file")->required();
  train->add_option("--set", train_sets, "Override key=value (repeatable)");

  std::string eval_ckpt;
  std::string eval_data;
  std::string eval_domain = "target";
  std::string eval_split = "test";
  std::string eval_cfg;
  std::vector<std::string> eval_sets;
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Dataset root")->required();
  eval->add_option("--domain", eval_domain, "source|target")
      ->check(CLI::IsMember({"source", "target"}))
      ->capture_default_str();
  eval->add_option("--split", eval_split, "train|val|test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  eval->add_option("--config", eval_cfg,
                   "Config file (default: config.resolved next to the checkpoint)");
  eval->add_option("--set", eval_sets, "Override key=value (repeatable)");
  eval->add_option("--out", eval_out, "Output directory (default: next to the checkpoint)");

  std::string abl_cfg;
  std::vector<std::string> abl_sets;
  std::string abl_axis;
  auto* abl = app.add_subcommand(
      "ablate", "Run an ablation sweep; DIFE_THREADS caps parallel cells");
  abl->add_option("--config", abl_cfg, "Config file")->required();
  abl->add_option("--set", abl_sets, "Override key=value (repeatable)");
  abl->add_option("--axis", abl_axis, "k|lambda|placement|dcloss")
      ->required()
      ->check(CLI::IsMember({"k", "lambda", "placement", "dcloss"}));

  std::string gc_module = "all";
  int gc_seeds = 20;
  std::string gc_fault;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--module", gc_module, "ops|snr|isw|net|all")
      ->check(CLI::IsMember({"ops", "snr", "isw", "net", "all"}))
      ->capture_default_str();
  gc->add_option("--seeds", gc_seeds, "Random seeds per check")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gc->add_option("--inject-fault", gc_fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(DIFE_CONFIG_ERROR);
  }

  if (*gen) {
    int h = 0;
    int w = 0;
    if (!parse_size(gen_size, h, w)) {
      std::fprintf(stderr, "dife: --size expects HxW, got '%s'\n", gen_size.c_str());
      return static_cast<int>(DIFE_CONFIG_ERROR);
    }
    dife_dataset_summary s{};
    const dife_status st =
        dife_generate(gen_out.c_str(), gen_count, gen_seed, h, w, gen_force ? 1 : 0, &s);
    if (st != DIFE_OK) return fail(st);
    std::printf("wrote %s: %d samples per domain (train %d, val %d, test %d), "
                "%zu manifest rows\n",
                gen_out.c_str(), s.count, s.train, s.val, s.test, s.manifest_rows);
    return 0;
  }

  if (*train) {
    ConfigHandle cfg;
    dife_status st = build_config(train_cfg, train_sets, cfg);
    if (st != DIFE_OK) return fail(st);
    dife_train_summary s{};
    st = dife_train(cfg.cfg, print_line, nullptr, &s);
    if (st != DIFE_OK) return fail(st);
    std::printf("final val mIoU %.4f (best epoch %d of %d%s)\n", s.best_val_miou,
                s.best_epoch, s.epochs_run, s.early_stopped ? ", early stop" : "");
    return 0;
  }

  if (*eval) {
    namespace fs = std::filesystem;
    const fs::path ckpt_dir = fs::path(eval_ckpt).parent_path();
    if (eval_cfg.empty()) eval_cfg = (ckpt_dir / "config.resolved").string();
    if (eval_out.empty()) {
      eval_out = (ckpt_dir / ("eval_" + eval_domain + "_" + eval_split)).string();
    }
    ConfigHandle cfg;
    dife_status st = build_config(eval_cfg, eval_sets, cfg);
    if (st != DIFE_OK) return fail(st);
    dife_model* model = nullptr;
    st = dife_model_load(cfg.cfg, eval_ckpt.c_str(), &model);
    if (st != DIFE_OK) return fail(st);
    dife_metrics m{};
    st = dife_model_evaluate(model, eval_data.c_str(), eval_domain.c_str(),
                             eval_split.c_str(), eval_out.c_str(), &m);
    dife_model_free(model);
    if (st != DIFE_OK) return fail(st);
    std::printf("%-8s %-6s %8s %8s %8s %8s %8s\n", "domain", "split", "mIoU", "mDSC",
                "mPrec", "mRec", "pixAcc");
    std::printf("%-8s %-6s %8.4f %8.4f %8.4f %8.4f %8.4f\n", eval_domain.c_str(),
                eval_split.c_str(), m.miou, m.mdsc, m.mprec, m.mrec, m.pix_acc);
    return 0;
  }

  if (*abl) {
    ConfigHandle cfg;
    dife_status st = build_config(abl_cfg, abl_sets, cfg);
    if (st != DIFE_OK) return fail(st);
    int rows = 0;
    st = dife_ablate(cfg.cfg, abl_axis.c_str(), workers_from_env(), print_line, nullptr,
                     &rows);
    if (st != DIFE_OK) return fail(st);
    std::printf("ablation '%s': %d rows\n", abl_axis.c_str(), rows);
    return 0;
  }

  // gradcheck
  if (!gc_fault.empty()) dife_debug_inject_fault(gc_fault.c_str());
  dife_report* report = nullptr;
  const dife_status st = dife_gradcheck(gc_module.c_str(), gc_seeds, &report);
  if (report == nullptr) return fail(st);
  std::printf("%-40s %12s %10s  %s\n", "check", "max_rel_err", "tol", "result");
  for (std::size_t i = 0; i < dife_report_size(report); ++i) {
    std::printf("%-40s %12.3e %10.1e  %s\n", dife_report_name(report, i),
                dife_report_error(report, i), dife_report_tolerance(report, i),
                dife_report_passed(report, i) ? "ok" : "FAIL");
  }
  if (st == DIFE_CHECK_FAILED) {
    for (std::size_t i = 0; i < dife_report_size(report); ++i) {
      if (!dife_report_passed(report, i)) {
        std::fprintf(stderr, "dife: gradient check failed: %s\n", dife_report_name(report, i));
      }
    }
  }
  dife_report_free(report);
  return static_cast<int>(st);
}
