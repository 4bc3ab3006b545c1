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

// Seeded open-world classification problems observed through a FrozenEncoder.

#include "decoop/core_model.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace decoop {

struct DatasetSpec {
  int num_classes = 20;
  int feature_dim = 64;
  double noise_sigma = 0.12;
  /// Minimum pairwise cosine distance (1 - cos) between class prototypes.
  double min_separation = 0.2;
  int shots_per_class = 16;
  int test_per_class = 200;
  /// Base fraction of the test set.
  double mixing_ratio = 0.5;
  double base_fraction = 0.5;
  /// Weight of the encoder's own class direction in each prototype; 0 gives
  /// prototypes unrelated to the class tokens.
  double alignment = 0.85;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LabeledExample {
  Vector feature;
  ClassId label = 0;
  SpaceTag space = SpaceTag::kBase;
};

struct OpenWorldDataset {
  DatasetSpec spec;
  ClassSpace class_space;
  Matrix prototypes;  // d_feat x C, unit columns
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
};

/// Draws prototypes, the base/new split, the few-shot train set and the mixed test set.
/// Throws std::runtime_error("prototype separation failed") when min_separation is unreachable.
OpenWorldDataset generate(const DatasetSpec &spec, const FrozenEncoder &enc);

struct SimulatedSplit {
  std::vector<LabeledExample> base;
  std::vector<LabeledExample> novel;
};

/// Splits the train set by a partition of the base classes into simulated base/new.
SimulatedSplit split_simulated(const OpenWorldDataset &dataset,
                               std::span<const ClassId> sim_base,
                               std::span<const ClassId> sim_new);

/// Line format: one header row of spec fields, then
/// `split,label,space_tag,f_0,...,f_{d-1}` rows.
void write_dataset(std::ostream &out, const OpenWorldDataset &dataset);
OpenWorldDataset read_dataset(std::istream &in);

}  // namespace decoop
