// Copyright 2026 The DeCoOp Lab Authors. All Rights Reserved.
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

#include "decoop/metrics.hpp"

#include "text_format.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

namespace decoop {

double harmonic_h(double acc_base, double acc_new) {
  if (!(acc_base >= 0.0 && acc_base <= 1.0) || !(acc_new >= 0.0 && acc_new <= 1.0))
    throw std::invalid_argument("accuracies must lie in [0, 1]");
  const double sum = acc_base + acc_new;
  return sum == 0.0 ? 0.0 : 2.0 * acc_base * acc_new / sum;
}

EvalReport evaluate(const PredictFn &predict, std::span<const LabeledExample> test) {
  if (test.empty()) throw std::invalid_argument("empty test set");
  std::int64_t hit_base = 0, hit_new = 0;
  EvalReport r;
  for (const auto &ex : test) {
    const bool hit = predict(ex) == ex.label;
    if (ex.space == SpaceTag::kBase) {
      ++r.n_base;
      hit_base += hit;
    } else {
      ++r.n_new;
      hit_new += hit;
    }
  }
  r.acc_overall = static_cast<double>(hit_base + hit_new) / static_cast<double>(test.size());
  if (r.base_defined()) r.acc_base = static_cast<double>(hit_base) / r.n_base;
  if (r.new_defined()) r.acc_new = static_cast<double>(hit_new) / r.n_new;
  if (r.base_defined() && r.new_defined()) r.h_metric = harmonic_h(r.acc_base, r.acc_new);
  return r;
}

double auroc(std::span<const double> base_scores, std::span<const double> new_scores) {
  if (base_scores.empty() || new_scores.empty())
    throw std::invalid_argument("AUROC needs scores from both classes");
  std::vector<double> sorted_new(new_scores.begin(), new_scores.end());
  std::sort(sorted_new.begin(), sorted_new.end());
  // Twice the Mann-Whitney U, kept integral so the result is exact.
  std::int64_t doubled = 0;
  for (double s : base_scores) {
    const auto lo = std::lower_bound(sorted_new.begin(), sorted_new.end(), s);
    const auto hi = std::upper_bound(lo, sorted_new.end(), s);
    doubled += 2 * (lo - sorted_new.begin()) + (hi - lo);
  }
  return static_cast<double>(doubled) /
         (2.0 * static_cast<double>(base_scores.size()) * static_cast<double>(new_scores.size()));
}

RocCurve roc_points(std::span<const double> base_scores, std::span<const double> new_scores) {
  if (base_scores.empty() || new_scores.empty())
    throw std::invalid_argument("ROC needs scores from both classes");
  std::vector<double> base(base_scores.begin(), base_scores.end());
  std::vector<double> neg(new_scores.begin(), new_scores.end());
  std::sort(base.begin(), base.end(), std::greater<>());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  std::vector<double> thresholds(base);
  thresholds.insert(thresholds.end(), neg.begin(), neg.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double nb = static_cast<double>(base.size());
  const double nn = static_cast<double>(neg.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  RocCurve curve;
  curve.points.push_back({inf, 0.0, 0.0});
  std::size_t bi = 0, ni = 0;
  for (double t : thresholds) {
    while (bi < base.size() && base[bi] >= t) ++bi;
    while (ni < neg.size() && neg[ni] >= t) ++ni;
    curve.points.push_back({t, static_cast<double>(ni) / nn, static_cast<double>(bi) / nb});
  }
  curve.points.push_back({-inf, 1.0, 1.0});
  return curve;
}

double trapezoid_area(const RocCurve &curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto &a = curve.points[i - 1];
    const auto &b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  return area;
}

void write_roc_csv(std::ostream &out, const RocCurve &curve) {
  out << "threshold,fpr,tpr\n";
  for (const auto &p : curve.points)
    out << text::format_double(p.threshold) << ',' << text::format_double(p.fpr) << ','
        << text::format_double(p.tpr) << '\n';
}

RocCurve read_roc_csv(std::istream &in) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "threshold,fpr,tpr")
    throw FormatError("not a ROC file");
  RocCurve curve;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const auto cols = text::split(line, ',');
    if (cols.size() != 3) throw FormatError("bad ROC row");
    auto threshold = [](std::string_view s) {
      s = text::trim(s);
      if (s == "inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
      return text::parse_double(s);
    };
    curve.points.push_back(
        {threshold(cols[0]), text::parse_double(cols[1]), text::parse_double(cols[2])});
  }
  return curve;
}

void write_eval_csv_row(std::ostream &out, const std::string &run_id, const std::string &method,
                        std::uint64_t seed, const EvalReport &r) {
  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : text::format_double(v); };
  out << run_id << ',' << method << ',' << seed << ',' << num(r.acc_base) << ','
      << num(r.acc_new) << ',' << num(r.acc_overall) << ',' << num(r.h_metric) << ','
      << num(r.auroc) << '\n';
}

}  // namespace decoop
