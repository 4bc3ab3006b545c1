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

// CoOp-style prompt tuning with plain SGD and a per-epoch cosine schedule.

#include "decoop/core_model.hpp"
#include "decoop/losses.hpp"
#include "decoop/synthetic_data.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

namespace decoop {

struct TrainConfig {
  int epochs = 100;
  double lr = 0.002;
  int batch_size = 32;
  std::uint64_t seed = 1;
  /// Entropy margin; read only by detector training.
  double margin = 0.4;
  int prompt_length = 16;
  double init_scale = 0.02;

  void validate() const;

  static TrainConfig detector_defaults() {
    TrainConfig c;
    c.epochs = 50;
    return c;
  }
  static TrainConfig classifier_defaults() { return TrainConfig{}; }
};

/// lr * (1 + cos(pi * epoch / epochs)) / 2 for epoch in [0, epochs).
double cosine_lr(double base_lr, int epoch, int epochs);

struct TrainedClassifier {
  PromptVector prompt;
  std::vector<ClassId> support;
  std::vector<double> loss_history;
};

using Batch = std::vector<LossExample>;
/// Produces the mini-batches of one epoch.
using BatchPlan = std::function<std::vector<Batch>(int epoch, std::mt19937_64 &rng)>;

struct SgdResult {
  PromptVector prompt;
  std::vector<double> loss_history;  // mean batch loss per epoch
};

/// The shared training loop. Throws DivergenceError("diverged at epoch t").
SgdResult run_sgd(const FrozenEncoder &enc, PromptVector init, std::span<const ClassId> support,
                  Temperature temp, const TrainConfig &cfg, const LossSpec &loss,
                  const BatchPlan &plan);

/// Shuffled fixed-size batches; the last short batch is kept.
std::vector<Batch> shuffled_batches(std::span<const LossExample> examples, int batch_size,
                                    std::mt19937_64 &rng);

/// Image embeddings of labeled examples, ready for a loss.
std::vector<LossExample> to_loss_examples(const FrozenEncoder &enc,
                                          std::span<const LabeledExample> examples,
                                          SpaceTag portion = SpaceTag::kBase);

/// Seeded N(0, init_scale^2) starting prompt.
PromptVector initial_prompt(const FrozenEncoder &enc, const TrainConfig &cfg, std::uint64_t seed);

/// Learns one prompt by minimizing mean cross-entropy over `support`.
TrainedClassifier tune_prompt(const FrozenEncoder &enc, std::span<const LabeledExample> train,
                              std::vector<ClassId> support, const TrainConfig &cfg,
                              Temperature temp = {});

ProbabilityDistribution pt_predict(const FrozenEncoder &enc, const TrainedClassifier &classifier,
                                   std::span<const ClassId> support, Temperature temp,
                                   const Vector &z);

void write_prompt(std::ostream &out, const PromptVector &prompt);
PromptVector read_prompt(std::istream &in);

/// Prompt checkpoint: config, seed, support, loss history and the token matrix.
void save_checkpoint(std::ostream &out, const TrainedClassifier &classifier,
                     const TrainConfig &cfg);
struct Checkpoint {
  TrainedClassifier classifier;
  TrainConfig config;
};
Checkpoint load_checkpoint(std::istream &in);

}  // namespace decoop
