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

#include "dife/metrics.hpp"

#include <cstdio>
#include <fstream>

#include "dife/errors.hpp"

namespace dife::metrics {

ConfusionCounts::ConfusionCounts(int num_classes) {
  if (num_classes < 1) throw ContractError("ConfusionCounts needs >= 1 class");
  classes_.resize(num_classes);
}

void ConfusionCounts::add(std::span<const int> truth, std::span<const int> pred,
                          int ignore_index) {
  if (truth.size() != pred.size()) {
    throw DimensionError("truth has " + std::to_string(truth.size()) +
                         " pixels, prediction " + std::to_string(pred.size()));
  }
  const int k = num_classes();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const int p = pred[i];
    if (t == ignore_index) continue;
    if (t < 0 || t >= k || p < 0 || p >= k) {
      throw DataError("class index " + std::to_string(t < 0 || t >= k ? t : p) +
                      " at pixel " + std::to_string(i) + " outside [0, " +
                      std::to_string(k) + ")");
    }
    ++pixels_;
    if (t == p) {
      ++classes_[t].tp;
    } else {
      ++classes_[t].fn;
      ++classes_[p].fp;
    }
  }
  // TN follows from the pixel total; recomputed so merge stays additive.
  for (ClassCounts& c : classes_) c.tn = pixels_ - c.tp - c.fp - c.fn;
}

void ConfusionCounts::merge(const ConfusionCounts& other) {
  if (other.num_classes() != num_classes()) {
    throw DimensionError("cannot merge confusion counts over different class sets");
  }
  for (std::size_t c = 0; c < classes_.size(); ++c) {
    classes_[c].tp += other.classes_[c].tp;
    classes_[c].fp += other.classes_[c].fp;
    classes_[c].fn += other.classes_[c].fn;
    classes_[c].tn += other.classes_[c].tn;
  }
  pixels_ += other.pixels_;
}

bool ConfusionCounts::present(int c) const {
  const ClassCounts& k = classes_.at(c);
  return k.tp + k.fp + k.fn > 0;
}

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

void accumulate(const std::optional<double>& v, double& sum, int& n) {
  if (!v) return;
  sum += *v;
  ++n;
}

}  // namespace

ClassMetrics class_metrics(const ClassCounts& c, int cls, bool present) {
  ClassMetrics m;
  m.cls = cls;
  m.present = present;
  m.iou = ratio(c.tp, c.tp + c.fp + c.fn);
  m.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.accuracy = ratio(c.tp + c.tn, c.total());
  return m;
}

MetricsReport summarize(const ConfusionCounts& counts) {
  MetricsReport r;
  double s_iou = 0, s_dsc = 0, s_prec = 0, s_rec = 0, s_acc = 0;
  int n_iou = 0, n_dsc = 0, n_prec = 0, n_rec = 0, n_acc = 0;
  for (int c = 0; c < counts.num_classes(); ++c) {
    ClassMetrics m = class_metrics(counts.at(c), c, counts.present(c));
    if (m.present) {
      accumulate(m.iou, s_iou, n_iou);
      accumulate(m.dice, s_dsc, n_dsc);
      accumulate(m.precision, s_prec, n_prec);
      accumulate(m.recall, s_rec, n_rec);
      accumulate(m.accuracy, s_acc, n_acc);
    }
    r.per_class.push_back(m);
  }
  r.miou = n_iou ? s_iou / n_iou : 0.0;
  r.mdsc = n_dsc ? s_dsc / n_dsc : 0.0;
  r.mprec = n_prec ? s_prec / n_prec : 0.0;
  r.mrec = n_rec ? s_rec / n_rec : 0.0;
  r.pix_acc = n_acc ? s_acc / n_acc : 0.0;
  return r;
}

double mean_iou(const ConfusionCounts& counts) { return summarize(counts).miou; }

namespace {

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

std::string cell(double v) { return cell(std::optional<double>(v)); }

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

}  // namespace

void write_metrics_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream out = open_csv(path);
  out << "class,IoU,Dice,precision,recall\n";
  for (const ClassMetrics& m : report.per_class) {
    if (!m.present) {
      out << m.cls << ",,,,\n";
      continue;
    }
    out << m.cls << ',' << cell(m.iou) << ',' << cell(m.dice) << ','
        << cell(m.precision) << ',' << cell(m.recall) << '\n';
  }
}

void write_summary_csv(std::span<const SummaryRow> rows, const std::string& path) {
  std::ofstream out = open_csv(path);
  out << "dataset,domain,mIoU,mDSC,mPrec,mRec,pixAcc\n";
  for (const SummaryRow& r : rows) {
    out << r.dataset << ',' << r.domain << ',' << cell(r.report.miou) << ','
        << cell(r.report.mdsc) << ',' << cell(r.report.mprec) << ','
        << cell(r.report.mrec) << ',' << cell(r.report.pix_acc) << '\n';
  }
}

}  // namespace dife::metrics
