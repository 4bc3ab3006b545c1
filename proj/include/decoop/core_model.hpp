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

// The frozen toy vision-language model and the prompt-conditioned classifier.
//
// Text side: a class prompt is the m learnable prompt tokens followed by the
// class token. Its embedding is mean-pool -> text_map -> tanh -> L2-normalize.
// Image side: a raw feature is mapped by image_map and L2-normalized.
// Classification is a temperature softmax over cosine similarities.

#include "decoop/types.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace decoop {

struct EncoderDims {
  int token_dim = 48;
  int embed_dim = 40;
  int feature_dim = 64;
  int num_classes = 20;
};

class FrozenEncoder {
 public:
  /// Seeded construction; all weights are N(0, 1) / sqrt(token_dim).
  FrozenEncoder(const EncoderDims &dims, std::uint64_t seed);

  /// Explicit weights. text_map is d x d_tok, image_map is d x d_feat and
  /// class_tokens holds one d_tok column per class.
  FrozenEncoder(Matrix text_map, Matrix image_map, Matrix class_tokens, std::uint64_t seed = 0);

  int token_dim() const { return static_cast<int>(text_map_.cols()); }
  int embed_dim() const { return static_cast<int>(text_map_.rows()); }
  int feature_dim() const { return static_cast<int>(image_map_.cols()); }
  int num_classes() const { return static_cast<int>(class_tokens_.cols()); }
  std::uint64_t seed() const { return seed_; }

  const Matrix &text_map() const { return text_map_; }
  const Matrix &image_map() const { return image_map_; }
  const Matrix &class_tokens() const { return class_tokens_; }

  bool has_class(ClassId c) const { return c >= 0 && c < num_classes(); }
  /// Throws std::out_of_range("unknown class") for ids outside 0..C-1.
  Eigen::Ref<const Vector> class_token(ClassId c) const;

 private:
  Matrix text_map_;
  Matrix image_map_;
  Matrix class_tokens_;
  std::uint64_t seed_;
};

using EncoderPtr = std::shared_ptr<const FrozenEncoder>;

/// The learnable context: m prompt tokens of width d_tok, stored one per row.
class PromptVector {
 public:
  explicit PromptVector(Matrix tokens);

  static PromptVector zeros(int length, int token_dim);
  /// Entries drawn i.i.d. from N(0, scale^2).
  static PromptVector random(int length, int token_dim, double scale, std::uint64_t seed);

  int length() const { return static_cast<int>(tokens_.rows()); }
  int token_dim() const { return static_cast<int>(tokens_.cols()); }
  const Matrix &tokens() const { return tokens_; }

  /// In-place SGD step: tokens -= step * gradient.
  void apply_step(const Matrix &gradient, double step);

  bool operator==(const PromptVector &other) const { return tokens_ == other.tokens_; }

 private:
  Matrix tokens_;
};

class Temperature {
 public:
  static constexpr double kDefault = 0.05;

  Temperature() = default;
  explicit Temperature(double value);
  double value() const { return value_; }

 private:
  double value_ = kDefault;
};

/// Full label set with its base/new partition.
class ClassSpace {
 public:
  ClassSpace(int num_classes, std::vector<ClassId> base);

  int num_classes() const { return static_cast<int>(all_.size()); }
  const std::vector<ClassId> &all() const { return all_; }
  const std::vector<ClassId> &base() const { return base_; }
  const std::vector<ClassId> &novel() const { return new_; }
  bool is_base(ClassId c) const { return tags_.at(static_cast<std::size_t>(c)) == SpaceTag::kBase; }
  SpaceTag tag(ClassId c) const { return tags_.at(static_cast<std::size_t>(c)); }
  const std::vector<ClassId> &members(SpaceTag tag) const {
    return tag == SpaceTag::kBase ? base_ : new_;
  }

 private:
  std::vector<ClassId> all_;
  std::vector<ClassId> base_;
  std::vector<ClassId> new_;
  std::vector<SpaceTag> tags_;
};

/// A categorical distribution over an ordered list of class ids.
struct ProbabilityDistribution {
  std::vector<ClassId> support;
  Vector probs;

  /// Index into `support` of the largest probability; first index on ties.
  std::size_t argmax_index() const;
  ClassId argmax() const { return support[argmax_index()]; }
  /// Probability of `c`, 0 if c is not in the support.
  double prob(ClassId c) const;
  /// Renormalized restriction to the classes of `subset` that are in the support.
  ProbabilityDistribution restrict_to(std::span<const ClassId> subset) const;
  /// Sum of probabilities of the classes in `subset`.
  double mass(std::span<const ClassId> subset) const;
};

/// Unit text embedding w_c(p) for one class.
Vector text_embedding(const FrozenEncoder &enc, const PromptVector &prompt, ClassId c);

/// Unit image embedding z of a raw feature vector.
Vector image_embedding(const FrozenEncoder &enc, const Vector &feature);

/// Numerically stable softmax of `logits`. Throws NumericalError on non-finite output.
Vector stable_softmax(const Vector &logits);

/// Precomputed unit text embeddings (one column per class of `support`) and
/// the temperature, so repeated predictions skip the text tower.
class TextHead {
 public:
  TextHead(std::vector<ClassId> support, Matrix weights, Temperature temp);

  static TextHead from_prompt(const FrozenEncoder &enc, const PromptVector &prompt,
                              std::vector<ClassId> support, Temperature temp);

  const std::vector<ClassId> &support() const { return support_; }
  const Matrix &weights() const { return weights_; }
  Temperature temperature() const { return temp_; }

  Vector logits(const Vector &z) const;
  ProbabilityDistribution predict(const Vector &z) const;
  /// A head over a subset of this head's support, keeping the given order.
  TextHead select(std::span<const ClassId> subset) const;

 private:
  std::vector<ClassId> support_;
  Matrix weights_;
  Temperature temp_;
};

/// Softmax of cosine similarities at temperature `temp` over exactly `support`.
ProbabilityDistribution classify(const FrozenEncoder &enc, const PromptVector &prompt,
                                 std::span<const ClassId> support, Temperature temp,
                                 const Vector &z);

}  // namespace decoop
