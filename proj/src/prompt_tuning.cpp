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

#include "decoop/prompt_tuning.hpp"

#include "keyvalue.hpp"
#include "seeding.hpp"
#include "text_format.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>

namespace decoop {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(margin >= 0.0)) throw std::invalid_argument("margin must be >= 0");
  if (prompt_length < 1) throw std::invalid_argument("prompt_length must be >= 1");
  if (!(init_scale >= 0.0)) throw std::invalid_argument("init_scale must be >= 0");
}

double cosine_lr(double base_lr, int epoch, int epochs) {
  return base_lr * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs)));
}

std::vector<Batch> shuffled_batches(std::span<const LossExample> examples, int batch_size,
                                    std::mt19937_64 &rng) {
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    Batch b;
    const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    for (std::size_t i = start; i < stop; ++i) b.push_back(examples[order[i]]);
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<LossExample> to_loss_examples(const FrozenEncoder &enc,
                                          std::span<const LabeledExample> examples,
                                          SpaceTag portion) {
  std::vector<LossExample> out;
  out.reserve(examples.size());
  for (const auto &ex : examples)
    out.push_back({image_embedding(enc, ex.feature), ex.label, portion, Vector()});
  return out;
}

PromptVector initial_prompt(const FrozenEncoder &enc, const TrainConfig &cfg, std::uint64_t seed) {
  return PromptVector::random(cfg.prompt_length, enc.token_dim(), cfg.init_scale,
                              derive_seed(seed, 0x696e6974ULL));
}

SgdResult run_sgd(const FrozenEncoder &enc, PromptVector init, std::span<const ClassId> support,
                  Temperature temp, const TrainConfig &cfg, const LossSpec &loss,
                  const BatchPlan &plan) {
  cfg.validate();
  SgdResult result{std::move(init), {}};
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x73686666ULL));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double step = cosine_lr(cfg.lr, epoch, cfg.epochs);
    const auto batches = plan(epoch, rng);
    double total = 0.0;
    try {
      for (const auto &batch : batches) {
        auto lg = loss_and_gradient(enc, result.prompt, support, temp, batch, loss);
        total += lg.loss;
        result.prompt.apply_step(lg.gradient, step);
      }
    } catch (const NumericalError &) {
      throw DivergenceError("diverged at epoch " + std::to_string(epoch), epoch);
    }
    if (!result.prompt.tokens().allFinite() || !std::isfinite(total))
      throw DivergenceError("diverged at epoch " + std::to_string(epoch), epoch);
    result.loss_history.push_back(batches.empty() ? 0.0
                                                  : total / static_cast<double>(batches.size()));
  }
  return result;
}

TrainedClassifier tune_prompt(const FrozenEncoder &enc, std::span<const LabeledExample> train,
                              std::vector<ClassId> support, const TrainConfig &cfg,
                              Temperature temp) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("empty training set");
  for (const auto &ex : train)
    if (std::find(support.begin(), support.end(), ex.label) == support.end())
      throw std::invalid_argument("label not in support");

  const auto examples = to_loss_examples(enc, train);
  BatchPlan plan = [&](int, std::mt19937_64 &rng) {
    return shuffled_batches(examples, cfg.batch_size, rng);
  };
  auto fit = run_sgd(enc, initial_prompt(enc, cfg, cfg.seed), support, temp, cfg,
                     CrossEntropyLoss{}, plan);
  return {std::move(fit.prompt), std::move(support), std::move(fit.loss_history)};
}

ProbabilityDistribution pt_predict(const FrozenEncoder &enc, const TrainedClassifier &classifier,
                                   std::span<const ClassId> support, Temperature temp,
                                   const Vector &z) {
  return classify(enc, classifier.prompt, support, temp, z);
}

void write_prompt(std::ostream &out, const PromptVector &prompt) {
  out << "tokens=" << prompt.length() << ' ' << prompt.token_dim() << '\n';
  for (int i = 0; i < prompt.length(); ++i) {
    for (int j = 0; j < prompt.token_dim(); ++j)
      out << (j ? " " : "") << text::format_double(prompt.tokens()(i, j));
    out << '\n';
  }
}

PromptVector read_prompt(std::istream &in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("tokens=", 0) != 0)
    throw FormatError("expected a tokens= line");
  const auto dims = text::parse_int_list(std::string_view(line).substr(7));
  if (dims.size() != 2 || dims[0] < 1 || dims[1] < 1) throw FormatError("bad token dimensions");
  Matrix tokens(dims[0], dims[1]);
  for (int i = 0; i < dims[0]; ++i) {
    if (!std::getline(in, line)) throw FormatError("truncated token matrix");
    const auto cells = text::split(text::trim(line), ' ');
    if (cells.size() != static_cast<std::size_t>(dims[1])) throw FormatError("bad token row");
    for (int j = 0; j < dims[1]; ++j)
      tokens(i, j) = text::parse_double(cells[static_cast<std::size_t>(j)]);
  }
  return PromptVector(std::move(tokens));
}

namespace {
constexpr const char *kCheckpointTag = "decoop-prompt/1";
}

void save_checkpoint(std::ostream &out, const TrainedClassifier &classifier,
                     const TrainConfig &cfg) {
  out << kCheckpointTag << '\n';
  write_train_config(out, cfg, "");
  out << "support=" << text::join_ints(classifier.support) << '\n';
  out << "loss_history=";
  for (std::size_t i = 0; i < classifier.loss_history.size(); ++i)
    out << (i ? " " : "") << text::format_double(classifier.loss_history[i]);
  out << '\n';
  write_prompt(out, classifier.prompt);
}

Checkpoint load_checkpoint(std::istream &in) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != kCheckpointTag)
    throw FormatError("not a prompt checkpoint");
  KeyValueReader kv(in, kTrainConfigFields + 2);
  TrainConfig cfg = read_train_config(kv, "");
  const auto support = text::parse_int_list(kv.take("support"));
  std::vector<double> history;
  const std::string history_text = kv.take("loss_history");
  for (auto part : text::split(text::trim(history_text), ' '))
    if (!text::trim(part).empty()) history.push_back(text::parse_double(part));
  PromptVector prompt = read_prompt(in);
  return {TrainedClassifier{std::move(prompt), support, std::move(history)}, cfg};
}

}  // namespace decoop
