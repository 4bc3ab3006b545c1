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

// A tiny experiment config and scratch directories for the runner tests.

#include "decoop/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace decoop::testing {

inline const char *kTinyConfig = R"(# tiny world
run.id=tiny
run.seeds=1,2
dataset.num_classes=8
dataset.feature_dim=12
dataset.shots_per_class=6
dataset.test_per_class=10
model.token_dim=10
model.embed_dim=8
model.ensemble_prompts=2
classifier.epochs=6
classifier.prompt_length=3
classifier.lr=0.05
classifier.batch_size=8
detector.epochs=4
detector.prompt_length=3
detector.lr=0.05
detector.batch_size=8
)";

inline ExperimentConfig tiny_config(const std::filesystem::path &out,
                                    const std::string &extra = "") {
  std::istringstream in(std::string(kTinyConfig) + "run.output_dir=" + out.string() + "\n" +
                        extra);
  return parse_config(in);
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string &tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("decoop_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir &) = delete;
  ScratchDir &operator=(const ScratchDir &) = delete;
  const std::filesystem::path &path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::vector<std::string> lines_of(const std::string &text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

}  // namespace decoop::testing
