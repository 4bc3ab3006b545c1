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

#include "decoop/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace decoop {
namespace {

Matrix seeded_normal(Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64 &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  // Column-major fill keeps the draw order independent of Eigen internals.
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * normal(rng);
  return m;
}

void require_finite(const Matrix &m, const char *what) {
  if (!m.allFinite()) throw std::invalid_argument(std::string(what) + " has non-finite entries");
}

}  // namespace

FrozenEncoder::FrozenEncoder(const EncoderDims &dims, std::uint64_t seed) : seed_(seed) {
  if (dims.token_dim < 1 || dims.embed_dim < 1 || dims.feature_dim < 1 || dims.num_classes < 1)
    throw std::invalid_argument("encoder dimensions must be positive");
  std::mt19937_64 rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dims.token_dim));
  text_map_ = seeded_normal(dims.embed_dim, dims.token_dim, scale, rng);
  image_map_ = seeded_normal(dims.embed_dim, dims.feature_dim, scale, rng);
  class_tokens_ = seeded_normal(dims.token_dim, dims.num_classes, scale, rng);
}

FrozenEncoder::FrozenEncoder(Matrix text_map, Matrix image_map, Matrix class_tokens,
                             std::uint64_t seed)
    : text_map_(std::move(text_map)),
      image_map_(std::move(image_map)),
      class_tokens_(std::move(class_tokens)),
      seed_(seed) {
  if (text_map_.size() == 0 || image_map_.size() == 0 || class_tokens_.size() == 0)
    throw std::invalid_argument("encoder weights must be non-empty");
  if (image_map_.rows() != text_map_.rows())
    throw std::invalid_argument("text and image maps disagree on embedding width");
  if (class_tokens_.rows() != text_map_.cols())
    throw std::invalid_argument("class tokens disagree with text map width");
  require_finite(text_map_, "text map");
  require_finite(image_map_, "image map");
  require_finite(class_tokens_, "class tokens");
}

Eigen::Ref<const Vector> FrozenEncoder::class_token(ClassId c) const {
  if (!has_class(c)) throw std::out_of_range("unknown class");
  return class_tokens_.col(c);
}

PromptVector::PromptVector(Matrix tokens) : tokens_(std::move(tokens)) {
  if (tokens_.rows() < 1 || tokens_.cols() < 1)
    throw std::invalid_argument("prompt needs at least one token");
  require_finite(tokens_, "prompt");
}

PromptVector PromptVector::zeros(int length, int token_dim) {
  return PromptVector(Matrix::Zero(length, token_dim));
}

PromptVector PromptVector::random(int length, int token_dim, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Matrix tokens(length, token_dim);
  for (int i = 0; i < length; ++i)
    for (int j = 0; j < token_dim; ++j) tokens(i, j) = normal(rng);
  return PromptVector(std::move(tokens));
}

void PromptVector::apply_step(const Matrix &gradient, double step) {
  tokens_.noalias() -= step * gradient;
}

Temperature::Temperature(double value) : value_(value) {
  if (!(value > 0.0) || !std::isfinite(value))
    throw std::invalid_argument("temperature must be positive");
}

ClassSpace::ClassSpace(int num_classes, std::vector<ClassId> base) : base_(std::move(base)) {
  if (num_classes < 2) throw std::invalid_argument("class space needs at least two classes");
  tags_.assign(static_cast<std::size_t>(num_classes), SpaceTag::kNew);
  for (ClassId c : base_) {
    if (c < 0 || c >= num_classes) throw std::invalid_argument("unknown class");
    if (tags_[static_cast<std::size_t>(c)] == SpaceTag::kBase)
      throw std::invalid_argument("duplicate base class");
    tags_[static_cast<std::size_t>(c)] = SpaceTag::kBase;
  }
  std::sort(base_.begin(), base_.end());
  for (ClassId c = 0; c < num_classes; ++c) {
    all_.push_back(c);
    if (tags_[static_cast<std::size_t>(c)] == SpaceTag::kNew) new_.push_back(c);
  }
  if (base_.empty() || new_.empty())
    throw std::invalid_argument("base and new class sets must both be nonempty");
}

std::size_t ProbabilityDistribution::argmax_index() const {
  Eigen::Index best = 0;
  probs.maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

double ProbabilityDistribution::prob(ClassId c) const {
  auto it = std::find(support.begin(), support.end(), c);
  return it == support.end() ? 0.0 : probs[it - support.begin()];
}

double ProbabilityDistribution::mass(std::span<const ClassId> subset) const {
  double total = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i)
    if (std::find(subset.begin(), subset.end(), support[i]) != subset.end()) total += probs[i];
  return total;
}

ProbabilityDistribution ProbabilityDistribution::restrict_to(std::span<const ClassId> subset) const {
  ProbabilityDistribution out;
  std::vector<double> kept;
  for (ClassId c : subset) {
    auto it = std::find(support.begin(), support.end(), c);
    if (it == support.end()) continue;
    out.support.push_back(c);
    kept.push_back(probs[it - support.begin()]);
  }
  if (out.support.empty()) throw std::invalid_argument("restriction has empty support");
  out.probs = Eigen::Map<Vector>(kept.data(), static_cast<Eigen::Index>(kept.size()));
  const double total = out.probs.sum();
  if (!(total > 0.0)) throw NumericalError("restriction has zero mass");
  out.probs /= total;
  return out;
}

Vector text_embedding(const FrozenEncoder &enc, const PromptVector &prompt, ClassId c) {
  if (prompt.token_dim() != enc.token_dim())
    throw std::invalid_argument("prompt token width does not match encoder");
  const auto token = enc.class_token(c);
  const Vector pooled = (prompt.tokens().colwise().sum().transpose() + token) /
                        static_cast<double>(prompt.length() + 1);
  const Vector activ = (enc.text_map() * pooled).array().tanh().matrix();
  const double norm = activ.norm();
  if (!(norm > 0.0)) throw std::domain_error("zero-norm embedding");
  return activ / norm;
}

Vector image_embedding(const FrozenEncoder &enc, const Vector &feature) {
  if (feature.size() != enc.feature_dim())
    throw std::invalid_argument("feature has wrong dimension");
  const Vector mapped = enc.image_map() * feature;
  const double norm = mapped.norm();
  if (!(norm > 0.0)) throw std::domain_error("zero-norm embedding");
  return mapped / norm;
}

Vector stable_softmax(const Vector &logits) {
  if (logits.size() == 0) throw std::invalid_argument("empty support");
  const double top = logits.maxCoeff();
  if (!std::isfinite(top)) throw NumericalError("numerical overflow");
  Vector out = (logits.array() - top).exp().matrix();
  out /= out.sum();
  if (!out.allFinite()) throw NumericalError("numerical overflow");
  return out;
}

TextHead::TextHead(std::vector<ClassId> support, Matrix weights, Temperature temp)
    : support_(std::move(support)), weights_(std::move(weights)), temp_(temp) {
  if (support_.empty()) throw std::invalid_argument("empty support");
  if (weights_.cols() != static_cast<Eigen::Index>(support_.size()))
    throw std::invalid_argument("head weights do not match support");
  std::vector<ClassId> sorted = support_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument("support entries must be unique");
}

TextHead TextHead::from_prompt(const FrozenEncoder &enc, const PromptVector &prompt,
                               std::vector<ClassId> support, Temperature temp) {
  if (support.empty()) throw std::invalid_argument("empty support");
  Matrix weights(enc.embed_dim(), static_cast<Eigen::Index>(support.size()));
  for (std::size_t i = 0; i < support.size(); ++i)
    weights.col(static_cast<Eigen::Index>(i)) = text_embedding(enc, prompt, support[i]);
  return TextHead(std::move(support), std::move(weights), temp);
}

Vector TextHead::logits(const Vector &z) const {
  if (z.size() != weights_.rows()) throw std::invalid_argument("embedding has wrong dimension");
  return weights_.transpose() * z / temp_.value();
}

ProbabilityDistribution TextHead::predict(const Vector &z) const {
  return ProbabilityDistribution{support_, stable_softmax(logits(z))};
}

TextHead TextHead::select(std::span<const ClassId> subset) const {
  Matrix weights(weights_.rows(), static_cast<Eigen::Index>(subset.size()));
  for (std::size_t i = 0; i < subset.size(); ++i) {
    auto it = std::find(support_.begin(), support_.end(), subset[i]);
    if (it == support_.end()) throw std::out_of_range("unknown class");
    weights.col(static_cast<Eigen::Index>(i)) = weights_.col(it - support_.begin());
  }
  return TextHead(std::vector<ClassId>(subset.begin(), subset.end()), std::move(weights), temp_);
}

ProbabilityDistribution classify(const FrozenEncoder &enc, const PromptVector &prompt,
                                 std::span<const ClassId> support, Temperature temp,
                                 const Vector &z) {
  if (support.empty()) throw std::invalid_argument("empty support");
  return TextHead::from_prompt(enc, prompt, {support.begin(), support.end()}, temp).predict(z);
}

}  // namespace decoop
