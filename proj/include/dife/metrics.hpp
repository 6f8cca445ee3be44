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

// Confusion counting and the per-class segmentation scores derived from it.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dife::metrics {

struct ClassCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ClassCounts&) const = default;
};

/// One-vs-rest counts per class. Merging is associative and commutative, so
/// shards may be counted independently.
class ConfusionCounts {
 public:
  explicit ConfusionCounts(int num_classes);

  /// Pixels whose ground truth equals `ignore_index` are skipped. Any other
  /// value outside [0, num_classes) in either map is a DataError.
  void add(std::span<const int> truth, std::span<const int> pred, int ignore_index);
  void merge(const ConfusionCounts& other);

  int num_classes() const { return static_cast<int>(classes_.size()); }
  const ClassCounts& at(int c) const { return classes_.at(c); }
  std::uint64_t pixels() const { return pixels_; }
  /// Class occurs in the ground truth or the prediction.
  bool present(int c) const;

  bool operator==(const ConfusionCounts&) const = default;

 private:
  std::vector<ClassCounts> classes_;
  std::uint64_t pixels_ = 0;
};

/// Scores for one class; a ratio with a zero denominator is left empty.
struct ClassMetrics {
  int cls = 0;
  bool present = false;
  std::optional<double> iou;
  std::optional<double> dice;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> accuracy;  // (TP+TN)/all
};

ClassMetrics class_metrics(const ClassCounts& c, int cls, bool present);

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double miou = 0.0;
  double mdsc = 0.0;
  double mprec = 0.0;
  double mrec = 0.0;
  double pix_acc = 0.0;
  std::vector<double> sample_miou;  // one entry per evaluated sample
};

/// Means run over present classes, skipping empty ratios.
MetricsReport summarize(const ConfusionCounts& counts);

/// Mean IoU of a single confusion table (present classes only); 0 when no
/// class is present.
double mean_iou(const ConfusionCounts& counts);

/// class,IoU,Dice,precision,recall (empty cells for undefined ratios).
void write_metrics_csv(const MetricsReport& report, const std::string& path);

struct SummaryRow {
  std::string dataset;
  std::string domain;
  MetricsReport report;
};
/// dataset,domain,mIoU,mDSC,mPrec,mRec,pixAcc
void write_summary_csv(std::span<const SummaryRow> rows, const std::string& path);

}  // namespace dife::metrics
