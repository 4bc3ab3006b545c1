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

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace decoop {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Class ids are dense integers 0..C-1.
using ClassId = int;

/// Which side of the base/new partition a class or example lives on.
enum class SpaceTag { kBase, kNew };

inline const char *to_string(SpaceTag tag) { return tag == SpaceTag::kBase ? "base" : "new"; }

/// Raised when a softmax, loss or gradient produces a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the training loops when the loss stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string &what, int epoch) : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Raised for malformed checkpoints, datasets and config files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace decoop
