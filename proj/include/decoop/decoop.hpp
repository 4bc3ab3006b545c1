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

// The decomposed context optimization pipeline: K leave-out new-class
// detectors with Otsu thresholds, one sub-classifier per detector, and routed
// inference between the sub-classifiers and the zero-shot model.

#include "decoop/prompt_tuning.hpp"
#include "decoop/synthetic_data.hpp"
#include "decoop/zeroshot.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace decoop {

/// One leave-out split of the base classes. `index` is 1-based.
struct DetectorPartition {
  int index = 1;
  std::vector<ClassId> sim_base;
  std::vector<ClassId> sim_new;

  bool operator==(const DetectorPartition &) const = default;
};

/// Seeded shuffle of the base classes cut into K folds whose sizes differ by
/// at most one; partition i leaves fold i out as its simulated new classes.
std::vector<DetectorPartition> partition_classes(std::span<const ClassId> base, int folds,
                                                 std::uint64_t seed);

/// Vocabulary a detector is scored over at test time: its simulated base
/// classes followed by the real new classes.
std::vector<ClassId> test_vocabulary(const DetectorPartition &partition, const ClassSpace &space);

/// Largest probability over the partition's simulated base classes of the
/// temperature softmax over `vocabulary`.
double detector_score(const FrozenEncoder &enc, const PromptVector &prompt,
                      const DetectorPartition &partition, std::span<const ClassId> vocabulary,
                      Temperature temp, const Vector &z);

/// Same score from a precomputed head over the vocabulary.
double detector_score(const TextHead &vocabulary_head, const DetectorPartition &partition,
                      const Vector &z);

/// Mini-batches that each carry a share of both the simulated base and
/// simulated new examples.
std::vector<Batch> stratified_batches(std::span<const LossExample> base,
                                      std::span<const LossExample> novel, int batch_size,
                                      std::mt19937_64 &rng);

struct TrainedDetector {
  DetectorPartition partition;
  PromptVector prompt;
  std::vector<double> loss_history;
};

/// Minimizes the entropy-margin loss over the base vocabulary.
TrainedDetector train_detector(const FrozenEncoder &enc, const OpenWorldDataset &dataset,
                               const DetectorPartition &partition, const TrainConfig &cfg,
                               Temperature temp = {});

/// Exact sample-level Otsu threshold. Candidates are the midpoints between
/// consecutive distinct scores; the one with the largest between-class
/// variance wins, ties (within a relative 1e-12) going to the smallest.
/// Throws std::invalid_argument("degenerate score distribution").
double otsu_threshold(std::span<const double> scores);

/// Between-class variance w0 w1 (mu0 - mu1)^2 of splitting `scores` at `threshold`.
double between_class_variance(std::span<const double> scores, double threshold);

/// Trains a sub-classifier: summed CE on training examples the detector keeps
/// (score >= threshold) and summed KL(P || P_zs) on the ones it rejects.
/// Throws std::runtime_error("detector rejects all training data").
TrainedClassifier train_subclassifier(const FrozenEncoder &enc, const OpenWorldDataset &dataset,
                                      const TrainedDetector &detector, double threshold,
                                      const ZeroShotModel &zs, const TrainConfig &cfg,
                                      Temperature temp = {});

struct DetectorEnsemble {
  std::vector<TrainedDetector> detectors;
  std::vector<double> thresholds;  // per detector
  double threshold = 0.0;          // their mean
};

struct DecoopConfig {
  int folds = 3;
  TrainConfig detector = TrainConfig::detector_defaults();
  TrainConfig classifier = TrainConfig::classifier_defaults();
};

class DecoopModel {
 public:
  DecoopModel(DetectorEnsemble ensemble, std::vector<TrainedClassifier> sub_classifiers,
              ZeroShotModel zs, ClassSpace space, DecoopConfig config);

  const DetectorEnsemble &ensemble() const { return ensemble_; }
  const std::vector<TrainedClassifier> &sub_classifiers() const { return sub_classifiers_; }
  const ZeroShotModel &zs() const { return zs_; }
  const ClassSpace &class_space() const { return space_; }
  const DecoopConfig &config() const { return config_; }
  int folds() const { return static_cast<int>(ensemble_.detectors.size()); }

  /// Test-vocabulary detector scores, one per detector.
  std::vector<double> detector_scores(const Vector &z) const;
  ProbabilityDistribution zs_full(const Vector &z) const { return zs_head_.predict(z); }
  ProbabilityDistribution sub_classifier_full(std::size_t i, const Vector &z) const {
    return sub_heads_.at(i).predict(z);
  }

 private:
  DetectorEnsemble ensemble_;
  std::vector<TrainedClassifier> sub_classifiers_;
  ZeroShotModel zs_;
  ClassSpace space_;
  DecoopConfig config_;
  std::vector<TextHead> detector_heads_;  // test vocabulary
  std::vector<TextHead> sub_heads_;       // full label set
  TextHead zs_head_;
};

/// Trains all detectors, their thresholds and the sub-classifiers. Detector i
/// (0-based) uses seed config.detector.seed + i, sub-classifier i uses
/// config.classifier.seed + i.
DecoopModel train_decoop(const FrozenEncoder &enc, const OpenWorldDataset &dataset,
                         const ZeroShotModel &zs, const DecoopConfig &config,
                         Temperature temp = {});

/// Sub-classifier position (0-based) picked by the detector scores, or nullopt
/// when every score is below the threshold. Ties go to the lowest position.
std::optional<std::size_t> route(std::span<const double> scores, double threshold);

struct DecoopPrediction {
  ClassId label;
  std::optional<std::size_t> sub_classifier;  // nullopt: zero-shot branch
};

DecoopPrediction decoop_predict(const DecoopModel &model, const Vector &z);

/// Largest test-vocabulary detector score; higher means more base-like.
double decoop_new_score(const DecoopModel &model, const Vector &z);

/// Model bundle: partitions, detector and sub-classifier prompts, thresholds,
/// configs, seeds and the zero-shot prompts. Loading needs the encoder.
void save_bundle(std::ostream &out, const DecoopModel &model);
DecoopModel load_bundle(std::istream &in, EncoderPtr enc);

}  // namespace decoop
