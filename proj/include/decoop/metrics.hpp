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

#pragma once

#include "decoop/synthetic_data.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace decoop {

/// Harmonic mean 2ab / (a + b), with H(0, 0) = 0.
double harmonic_h(double acc_base, double acc_new);

struct EvalReport {
  double acc_base = std::numeric_limits<double>::quiet_NaN();
  double acc_new = std::numeric_limits<double>::quiet_NaN();
  double acc_overall = 0.0;
  double h_metric = std::numeric_limits<double>::quiet_NaN();
  /// Filled in by the caller when a base score is available.
  double auroc = std::numeric_limits<double>::quiet_NaN();
  int n_base = 0;
  int n_new = 0;

  bool base_defined() const { return n_base > 0; }
  bool new_defined() const { return n_new > 0; }
};

using PredictFn = std::function<ClassId(const LabeledExample &)>;

/// Accuracy on the base subset, the new subset and overall. A missing space
/// leaves its accuracy (and H) as NaN.
EvalReport evaluate(const PredictFn &predict, std::span<const LabeledExample> test);

/// Mann-Whitney AUROC with base as the positive (high-score) class; ties count 1/2.
double auroc(std::span<const double> base_scores, std::span<const double> new_scores);

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

/// ROC points, thresholds descending from +inf through every distinct score to -inf.
struct RocCurve {
  std::vector<RocPoint> points;
};

RocCurve roc_points(std::span<const double> base_scores, std::span<const double> new_scores);
double trapezoid_area(const RocCurve &curve);

/// `threshold,fpr,tpr` rows under a header line.
void write_roc_csv(std::ostream &out, const RocCurve &curve);
RocCurve read_roc_csv(std::istream &in);

inline constexpr const char *kEvalCsvHeader =
    "run_id,method,seed,acc_base,acc_new,acc_overall,h,auroc";
void write_eval_csv_row(std::ostream &out, const std::string &run_id, const std::string &method,
                        std::uint64_t seed, const EvalReport &report);

}  // namespace decoop
