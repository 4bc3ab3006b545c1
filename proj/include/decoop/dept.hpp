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

// Decomposed prompt tuning: an OOD decision routes each input either to the
// prompt-tuned classifier (base branch) or to the zero-shot classifier.

#include "decoop/prompt_tuning.hpp"
#include "decoop/zeroshot.hpp"

#include <iosfwd>
#include <optional>
#include <span>

namespace decoop {

enum class DeptBranch { kPromptTuned, kZeroShot };

class DeptModel {
 public:
  /// `pt.support` must equal the base classes of `space`.
  DeptModel(ZeroShotModel zs, TrainedClassifier pt, ClassSpace space);

  const ZeroShotModel &zs() const { return zs_; }
  const TrainedClassifier &pt() const { return pt_; }
  const ClassSpace &class_space() const { return space_; }

  ProbabilityDistribution zs_full(const Vector &z) const { return zs_head_.predict(z); }
  ProbabilityDistribution pt_full(const Vector &z) const { return pt_head_.predict(z); }

 private:
  ZeroShotModel zs_;
  TrainedClassifier pt_;
  ClassSpace space_;
  TextHead zs_head_;  // over the full label set
  TextHead pt_head_;  // over the full label set
};

struct DeptPrediction {
  ClassId label;
  DeptBranch branch;
};

/// Hard routing: MSP base score >= MSP new score sends z to the tuned prompt.
DeptPrediction dept_predict(const DeptModel &model, const Vector &z);

/// Product form over the full label set: the tuned prompt's distribution
/// conditioned on the base classes times the zero-shot base mass, and the
/// zero-shot distribution conditioned on the new classes times the new mass.
ProbabilityDistribution soft_dept_distribution(const DeptModel &model, const Vector &z);

/// Per-example cross-entropies, in nats. A zero probability at the label gives
/// +inf and clears `finite`.
struct CrossEntropyTerms {
  double ood_zs = 0.0;  // -log P_zs(y in Y_k | x), k = space of the label
  double cls_zs = 0.0;  // -log P_zs(label | y in Y_k, x)
  double cls_pt = 0.0;  // -log P_pt(label | y in Y_k, x)
  double zs = 0.0;      // -log P_zs(label | x)
  double dept = 0.0;    // -log soft_dept(label | x)
  bool finite = true;
};

CrossEntropyTerms cross_entropy_terms(const DeptModel &model, const Vector &z, ClassId label);

struct TheoremReport {
  double delta = 0.0;    // E_all[cls_zs]
  double Delta = 0.0;    // E_base[cls_zs] - E_base[cls_pt]
  double epsilon = 0.0;  // E_all[ood_zs]
  double alpha = 0.0;
  double lhs_zs = 0.0;
  double lhs_dept = 0.0;
  double rhs_zs = 0.0;
  double rhs_dept = 0.0;
  bool bound_zs_holds = false;
  bool bound_dept_holds = false;
  bool valid = true;
  int n_examples = 0;
  int n_base = 0;
  int n_infinite = 0;
};

/// Absolute slack allowed when comparing a measured expectation with its bound.
inline constexpr double kBoundTolerance = 1e-9;

/// Measures the bound constants on `test` and checks both inequalities.
/// `alpha` defaults to the empirical base fraction of `test`.
TheoremReport check_theorem(const DeptModel &model, std::span<const LabeledExample> test,
                            std::optional<double> alpha = std::nullopt);

void write_theorem_report(std::ostream &out, const TheoremReport &report);
TheoremReport read_theorem_report(std::istream &in);

}  // namespace decoop
