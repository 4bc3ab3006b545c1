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

// Prompt losses and their analytic gradients. The encoder is frozen, so the
// only parameters are the prompt tokens.

#include "decoop/core_model.hpp"

#include <span>
#include <variant>

namespace decoop {

/// One training example as seen by a loss: an image embedding, its label,
/// which portion of a composite loss it feeds, and (for KL terms) the
/// reference distribution over the loss support.
struct LossExample {
  Vector z;
  ClassId label = 0;
  SpaceTag portion = SpaceTag::kBase;
  Vector reference;
};

/// Mean cross-entropy over the batch.
struct CrossEntropyLoss {};
/// Mean prediction entropy over the batch.
struct EntropyLoss {};
/// Mean CE on the base portion plus max{0, margin + mean H(base) - mean H(new)}.
struct EntropyMarginLoss {
  double margin = 0.4;
};
/// Summed CE on the base portion plus summed KL(P || reference) on the new portion.
struct CeKlLoss {};

using LossSpec = std::variant<CrossEntropyLoss, EntropyLoss, EntropyMarginLoss, CeKlLoss>;

struct LossAndGradient {
  double loss = 0.0;
  Matrix gradient;  // m x d_tok, same shape as the prompt
};

/// Scalar loss only.
double loss_value(const FrozenEncoder &enc, const PromptVector &prompt,
                  std::span<const ClassId> support, Temperature temp,
                  std::span<const LossExample> batch, const LossSpec &spec);

/// Loss and its gradient with respect to every prompt token.
LossAndGradient loss_and_gradient(const FrozenEncoder &enc, const PromptVector &prompt,
                                  std::span<const ClassId> support, Temperature temp,
                                  std::span<const LossExample> batch, const LossSpec &spec);

/// Shannon entropy in nats, with 0 log 0 = 0.
double entropy(const Vector &probs);

/// KL(p || q) in nats.
double kl_divergence(const Vector &p, const Vector &q);

/// The hinge of the entropy-margin loss.
inline double entropy_margin_hinge(double margin, double base_entropy, double new_entropy) {
  const double v = margin + base_entropy - new_entropy;
  return v > 0.0 ? v : 0.0;
}

}  // namespace decoop
