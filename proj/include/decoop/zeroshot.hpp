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

#include "decoop/core_model.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace decoop {

/// Frozen zero-shot classifier. With several fixed prompts, the per-class unit
/// embeddings are averaged and renormalized (embedding-level prompt ensemble).
class ZeroShotModel {
 public:
  ZeroShotModel(EncoderPtr enc, std::vector<PromptVector> prompts, Temperature temp = {});

  /// `count` seeded N(0, scale^2) prompts standing in for hand-written templates.
  static ZeroShotModel seeded(EncoderPtr enc, int count, int length, std::uint64_t seed,
                              Temperature temp = {}, double scale = 0.02);

  const FrozenEncoder &encoder() const { return *enc_; }
  const EncoderPtr &encoder_ptr() const { return enc_; }
  const std::vector<PromptVector> &prompts() const { return prompts_; }
  Temperature temperature() const { return temp_; }

  TextHead head(std::span<const ClassId> support) const;
  ProbabilityDistribution predict(std::span<const ClassId> support, const Vector &z) const;

 private:
  EncoderPtr enc_;
  std::vector<PromptVector> prompts_;
  Temperature temp_;
  Matrix class_weights_;  // d x C, one averaged unit embedding per class
};

struct SpaceScores {
  double base = 0.0;
  double novel = 0.0;
};

/// MSP detector: per space, the largest full-label-set zero-shot probability.
SpaceScores msp_space_scores(const ZeroShotModel &model, const ClassSpace &space, const Vector &z);
SpaceScores msp_space_scores(const ProbabilityDistribution &full, const ClassSpace &space);

/// Probability mass of each space under the full-label-set zero-shot distribution.
SpaceScores mass_space_probability(const ZeroShotModel &model, const ClassSpace &space,
                                   const Vector &z);
SpaceScores mass_space_probability(const ProbabilityDistribution &full, const ClassSpace &space);

/// MSP routing decision: true when the base score is at least the new score.
inline bool msp_prefers_base(const SpaceScores &s) { return s.base >= s.novel; }

}  // namespace decoop
