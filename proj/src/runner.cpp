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

#include "dife/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "dife/errors.hpp"
#include "dife/gradcheck_suites.hpp"
#include "dife/stats.hpp"
#include "dife/train.hpp"

namespace dife {
namespace fs = std::filesystem;

namespace {

void emit(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

void prepare_out_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("output.dir is not set");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

struct SourceData {
  std::vector<data::DomainSample> train;
  std::vector<data::DomainSample> val;
};

SourceData load_source(const std::string& root) {
  if (root.empty()) throw ConfigError("data.root is not set");
  SourceData d;
  d.train = data::load_split(root, data::Domain::kSource, data::Split::kTrain);
  d.val = data::load_split(root, data::Domain::kSource, data::Split::kVal);
  if (d.train.empty()) throw ConfigError("no source/train samples under " + root);
  if (d.val.empty()) throw ConfigError("no source/val samples under " + root);
  return d;
}

bool plain_network(const NetConfig& cfg) {
  return cfg.snr_stages.empty() && cfg.isw_stages.empty();
}

TrainResult fit(SegNet& net, const RunConfig& cfg, const SourceData& data, const LogFn& log) {
  TrainHooks hooks;
  hooks.twin = cfg.twin;
  hooks.on_epoch = [&](const EpochLog& e) {
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "epoch %3d  lr %.5f  task %.4f  isw %.4f  dc %.4f  val mIoU %.4f", e.epoch,
                  e.lr, e.task, e.isw, e.dc, e.val_miou);
    emit(log, buf);
  };
  return plain_network(cfg.net) ? train_baseline(net, cfg.train, data.train, data.val, hooks)
                                : train(net, cfg.train, data.train, data.val, hooks);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

GenerateSummary run_generate(const std::string& out_dir, int count, std::uint64_t seed,
                             int h, int w, bool force) {
  if (count < 1) throw ConfigError("--count must be >= 1");
  if (out_dir.empty()) throw ConfigError("--out is required");
  if (fs::exists(out_dir)) {
    if (!fs::is_directory(out_dir)) throw ConfigError(out_dir + " exists and is not a directory");
    if (!fs::is_empty(out_dir)) {
      if (!force) {
        throw ConfigError(out_dir + " is not empty; pass --force to overwrite");
      }
      fs::remove_all(out_dir);
    }
  }
  const auto rows = data::write_dataset(out_dir, count, seed, h, w);
  GenerateSummary s;
  s.count = count;
  s.sizes = data::split_sizes(count);
  s.manifest_rows = rows.size();
  return s;
}

TrainSummary run_train(const RunConfig& cfg, const LogFn& log) {
  cfg.validate();
  prepare_out_dir(cfg.out_dir);
  const fs::path out(cfg.out_dir);
  const std::string resolved = cfg.resolved();
  write_text(out / "config.resolved", resolved);
  emit(log, "# resolved config");
  {
    std::stringstream ss(resolved);
    std::string line;
    while (std::getline(ss, line)) emit(log, "#   " + line);
  }

  const SourceData data = load_source(cfg.data_root);
  SegNet net(cfg.net, cfg.train.seed);
  const TrainResult result = fit(net, cfg, data, log);

  TrainSummary s;
  s.best_val_miou = result.best_val_miou;
  s.best_epoch = result.best_epoch;
  s.epochs_run = static_cast<int>(result.epochs.size());
  s.early_stopped = result.early_stopped;
  s.warnings = result.warnings;
  s.checkpoint = (out / "model.ckpt").string();
  write_train_log_csv(result.epochs, (out / "train_log.csv").string());
  save_checkpoint(net, s.checkpoint);
  std::size_t i = 0;
  for (int stage : cfg.net.isw_stages) {
    if (i >= result.stats.size()) break;
    isw::write_matrix_csv(result.stats[i++].mask(),
                          (out / ("isw_mask_stage" + std::to_string(stage) + ".csv")).string());
  }
  for (const std::string& w : s.warnings) emit(log, "warning: " + w);
  return s;
}

std::unique_ptr<SegNet> load_model(const RunConfig& cfg, const std::string& checkpoint) {
  auto net = std::make_unique<SegNet>(cfg.net, cfg.train.seed);
  load_checkpoint(*net, checkpoint);
  return net;
}

metrics::MetricsReport evaluate_split(SegNet& net, const std::string& data_root,
                                      data::Domain domain, data::Split split,
                                      const std::string& out_dir) {
  const NetConfig& ncfg = net.config();
  const auto samples = data::load_split(data_root, domain, split);
  if (samples.empty()) {
    throw ConfigError(std::string("no ") + data::to_string(domain) + "/" +
                      data::to_string(split) + " samples under " + data_root);
  }
  const metrics::MetricsReport report =
      evaluate(net, samples, ncfg.num_classes, plain_network(ncfg));

  prepare_out_dir(out_dir);
  const fs::path out(out_dir);
  metrics::write_metrics_csv(report, (out / "metrics.csv").string());
  const metrics::SummaryRow row{data::to_string(split), data::to_string(domain), report};
  metrics::write_summary_csv(std::span<const metrics::SummaryRow>(&row, 1),
                             (out / "summary.csv").string());
  std::ofstream per(out / "sample_iou.csv");
  if (!per) throw IoError("cannot write sample_iou.csv in " + out_dir);
  per << "index,sample_mIoU\n";
  for (std::size_t i = 0; i < report.sample_miou.size(); ++i) {
    per << i << ',' << fmt(report.sample_miou[i]) << '\n';
  }
  return report;
}

metrics::MetricsReport run_eval(const RunConfig& cfg, const std::string& checkpoint,
                                const std::string& data_root, data::Domain domain,
                                data::Split split, const std::string& out_dir) {
  auto net = load_model(cfg, checkpoint);
  return evaluate_split(*net, data_root, domain, split, out_dir);
}

std::vector<AblationCell> ablation_cells(const RunConfig& base, const std::string& axis) {
  std::vector<AblationCell> cells;
  auto add = [&](const std::string& label, const std::function<void(RunConfig&)>& edit) {
    RunConfig c = base;
    edit(c);
    cells.push_back({label, c});
  };
  if (axis == "k") {
    for (int k : {2, 3, 5, 7, 10, 20}) {
      add("k=" + std::to_string(k), [k](RunConfig& c) { c.net.k = k; });
    }
  } else if (axis == "lambda") {
    for (double l2 : {0.0, 1.0}) {
      for (double l1 : {0.0, 0.3, 0.6, 1.2}) {
        char label[64];
        std::snprintf(label, sizeof(label), "lambda1=%g lambda2=%g", l1, l2);
        add(label, [l1, l2](RunConfig& c) {
          c.net.lambda1 = l1;
          c.net.lambda2 = l2;
        });
      }
    }
  } else if (axis == "placement") {
    // Five single/multi SNR placements over three stages with whitening
    // fixed at every stage; see docs/placement.md for the row mapping.
    const std::vector<std::pair<const char*, std::set<int>>> rows = {
        {"snr=[2]", {2}},   {"snr=[1,2]", {1, 2}}, {"snr=[2,3]", {2, 3}},
        {"snr=[3]", {3}},   {"snr=[1,3]", {1, 3}}};
    for (const auto& [label, stages] : rows) {
      const std::set<int> snr = stages;
      add(label, [snr](RunConfig& c) {
        c.net.snr_stages = snr;
        c.net.isw_stages = {1, 2, 3};
      });
    }
  } else if (axis == "dcloss") {
    for (snr::DcMode m : {snr::DcMode::kFull, snr::DcMode::kNoPlus, snr::DcMode::kNoMinus,
                          snr::DcMode::kNone}) {
      add(std::string("dc=") + snr::to_string(m), [m](RunConfig& c) { c.net.dc_mode = m; });
    }
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "' (expected k|lambda|placement|dcloss)");
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cells[i].cfg.out_dir = (fs::path(base.out_dir) / ("cell" + std::to_string(i))).string();
  }
  return cells;
}

std::vector<AblationRow> run_ablate(const RunConfig& cfg, const std::string& axis, int workers,
                                    const LogFn& log) {
  cfg.validate();
  const std::vector<AblationCell> cells = ablation_cells(cfg, axis);
  for (const AblationCell& c : cells) c.cfg.validate();
  prepare_out_dir(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / "config.resolved", cfg.resolved());

  const SourceData source = load_source(cfg.data_root);
  const auto source_test =
      data::load_split(cfg.data_root, data::Domain::kSource, data::Split::kTest);
  const auto target_test =
      data::load_split(cfg.data_root, data::Domain::kTarget, data::Split::kTest);
  if (source_test.empty() || target_test.empty()) {
    throw ConfigError("ablation needs source/test and target/test samples under " +
                      cfg.data_root);
  }

  std::vector<AblationRow> rows(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        const AblationCell& cell = cells[i];
        prepare_out_dir(cell.cfg.out_dir);
        write_text(fs::path(cell.cfg.out_dir) / "config.resolved", cell.cfg.resolved());
        SegNet net(cell.cfg.net, cell.cfg.train.seed);
        const TrainResult r = fit(net, cell.cfg, source, {});
        write_train_log_csv(r.epochs,
                            (fs::path(cell.cfg.out_dir) / "train_log.csv").string());
        const bool plain = plain_network(cell.cfg.net);
        const int k = cell.cfg.net.num_classes;
        AblationRow& row = rows[i];
        row.label = cell.label;
        row.cfg = cell.cfg;
        row.val_miou = r.best_val_miou;
        row.source_test_miou = evaluate(net, source_test, k, plain).miou;
        const metrics::MetricsReport target = evaluate(net, target_test, k, plain);
        row.target_miou = target.miou;
        row.target_sample_iou = target.sample_miou;
        std::lock_guard<std::mutex> lock(log_mutex);
        emit(log, cell.label + ": val " + fmt(row.val_miou) + "  source test " +
                      fmt(row.source_test_miou) + "  target " + fmt(row.target_miou));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(cells.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::ofstream csv(fs::path(cfg.out_dir) / "ablation.csv");
  if (!csv) throw IoError("cannot write ablation.csv in " + cfg.out_dir);
  csv << "axis,cell,snr_stages,isw_stages,lambda1,lambda2,k,dc_mode,val_mIoU,"
         "source_test_mIoU,target_mIoU\n";
  for (const AblationRow& r : rows) {
    csv << axis << ",\"" << r.label << "\",\"" << r.cfg.get("net.snr_stages") << "\",\""
        << r.cfg.get("net.isw_stages") << "\"," << r.cfg.get("net.lambda1") << ','
        << r.cfg.get("net.lambda2") << ',' << r.cfg.net.k << ','
        << snr::to_string(r.cfg.net.dc_mode) << ',' << fmt(r.val_miou) << ','
        << fmt(r.source_test_miou) << ',' << fmt(r.target_miou) << '\n';
  }

  std::vector<stats::TTestRow> tests;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    tests.push_back({"\"" + rows[i].label + " vs " + rows[0].label + "\"",
                     stats::paired_t_test(rows[i].target_sample_iou,
                                          rows[0].target_sample_iou)});
  }
  stats::write_ttest_csv(tests, "per-sample target mIoU",
                         (fs::path(cfg.out_dir) / "ttest.csv").string());
  return rows;
}

std::vector<GradCheckResult> run_gradcheck(const std::string& module, int seeds) {
  if (seeds < 1) throw ConfigError("--seeds must be >= 1");
  std::vector<std::string> modules;
  if (module == "all") {
    modules = gradcheck_modules();
  } else {
    modules.push_back(module);
  }
  std::vector<GradCheckResult> out;
  for (const std::string& m : modules) {
    // Worst case per check name across seeds.
    std::vector<GradCheckResult> worst;
    for (int s = 0; s < seeds; ++s) {
      const auto results = run_gradcheck_suite(m, static_cast<std::uint64_t>(s));
      if (worst.empty()) {
        worst = results;
        continue;
      }
      for (std::size_t i = 0; i < results.size(); ++i) {
        if (results[i].max_relative_error > worst[i].max_relative_error ||
            std::isnan(results[i].max_relative_error)) {
          worst[i] = results[i];
        }
      }
    }
    out.insert(out.end(), worst.begin(), worst.end());
  }
  return out;
}

}  // namespace dife
