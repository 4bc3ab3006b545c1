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

#include "decoop/zeroshot.hpp"

#include "seeding.hpp"

#include <algorithm>

namespace decoop {

ZeroShotModel::ZeroShotModel(EncoderPtr enc, std::vector<PromptVector> prompts, Temperature temp)
    : enc_(std::move(enc)), prompts_(std::move(prompts)), temp_(temp) {
  if (!enc_) throw std::invalid_argument("zero-shot model needs an encoder");
  if (prompts_.empty()) throw std::invalid_argument("zero-shot model needs at least one prompt");
  class_weights_ = Matrix::Zero(enc_->embed_dim(), enc_->num_classes());
  for (ClassId c = 0; c < enc_->num_classes(); ++c) {
    for (const auto &p : prompts_) class_weights_.col(c) += text_embedding(*enc_, p, c);
    const double norm = class_weights_.col(c).norm();
    if (!(norm > 0.0)) throw std::domain_error("zero-norm embedding");
    class_weights_.col(c) /= norm;
  }
}

ZeroShotModel ZeroShotModel::seeded(EncoderPtr enc, int count, int length, std::uint64_t seed,
                                    Temperature temp, double scale) {
  if (!enc) throw std::invalid_argument("zero-shot model needs an encoder");
  std::vector<PromptVector> prompts;
  for (int i = 0; i < count; ++i)
    prompts.push_back(PromptVector::random(length, enc->token_dim(), scale,
                                           derive_seed(seed, static_cast<std::uint64_t>(i))));
  return ZeroShotModel(std::move(enc), std::move(prompts), temp);
}

TextHead ZeroShotModel::head(std::span<const ClassId> support) const {
  if (support.empty()) throw std::invalid_argument("empty support");
  Matrix weights(class_weights_.rows(), static_cast<Eigen::Index>(support.size()));
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (!enc_->has_class(support[i])) throw std::out_of_range("unknown class");
    weights.col(static_cast<Eigen::Index>(i)) = class_weights_.col(support[i]);
  }
  return TextHead({support.begin(), support.end()}, std::move(weights), temp_);
}

ProbabilityDistribution ZeroShotModel::predict(std::span<const ClassId> support,
                                               const Vector &z) const {
  return head(support).predict(z);
}

SpaceScores msp_space_scores(const ProbabilityDistribution &full, const ClassSpace &space) {
  SpaceScores s;
  for (std::size_t i = 0; i < full.support.size(); ++i) {
    double &slot = space.is_base(full.support[i]) ? s.base : s.novel;
    slot = std::max(slot, full.probs[static_cast<Eigen::Index>(i)]);
  }
  return s;
}

SpaceScores msp_space_scores(const ZeroShotModel &model, const ClassSpace &space, const Vector &z) {
  return msp_space_scores(model.predict(space.all(), z), space);
}

SpaceScores mass_space_probability(const ProbabilityDistribution &full, const ClassSpace &space) {
  SpaceScores s;
  for (std::size_t i = 0; i < full.support.size(); ++i)
    (space.is_base(full.support[i]) ? s.base : s.novel) += full.probs[static_cast<Eigen::Index>(i)];
  const double total = s.base + s.novel;
  s.base /= total;
  s.novel /= total;
  return s;
}

SpaceScores mass_space_probability(const ZeroShotModel &model, const ClassSpace &space,
                                   const Vector &z) {
  return mass_space_probability(model.predict(space.all(), z), space);
}

}  // namespace decoop
