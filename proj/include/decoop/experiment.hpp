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

// Batch experiment runner: configs, per-seed pipelines and the file outputs
// behind the command-line subcommands.

#include "decoop/decoop.hpp"
#include "decoop/dept.hpp"
#include "decoop/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace decoop {

/// Bad config file or key; carries the offending key when there is one.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string &what, std::string key = {})
      : std::runtime_error(what), key_(std::move(key)) {}
  const std::string &key() const { return key_; }

 private:
  std::string key_;
};

inline const std::vector<std::string> &all_methods() {
  static const std::vector<std::string> methods{"zs", "prompt-ens", "coop", "dept", "decoop"};
  return methods;
}

struct ModelConfig {
  EncoderDims dims;  // num_classes and feature_dim follow the dataset
  std::uint64_t seed = 7;
  double temperature = Temperature::kDefault;
  int ensemble_prompts = 4;
  std::uint64_t zs_seed = 0x5eed2e50ULL;
};

struct ExperimentConfig {
  std::string run_id = "default";
  ModelConfig model;
  DatasetSpec dataset;  // per-run dataset seed is dataset.seed + run seed
  TrainConfig detector = TrainConfig::detector_defaults();
  TrainConfig classifier = TrainConfig::classifier_defaults();
  int folds = 3;
  std::vector<std::string> methods = all_methods();
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string output_dir = "out";
  bool save_artifacts = true;

  void validate() const;
  /// Flat dotted key=value form; parse_config(to_text()) reproduces the config.
  std::string to_text() const;
  std::map<std::string, std::string> to_map() const;
};

/// Parses `key=value` lines (`#` comments, blank lines allowed) over the defaults.
/// Unknown keys and malformed values throw ConfigError.
ExperimentConfig parse_config(std::istream &in);
ExperimentConfig load_config(const std::filesystem::path &path);

/// Environment variable that overrides output_dir.
inline constexpr const char *kOutputDirEnv = "DECOOP_OUTPUT_DIR";
std::filesystem::path resolve_output_dir(const ExperimentConfig &config);

struct MethodResult {
  std::string method;
  EvalReport report;
  std::vector<double> base_scores;  // per base test example; higher = more base-like
  std::vector<double> new_scores;
};

/// Everything one seed produces.
struct SeedRun {
  std::uint64_t seed = 0;
  OpenWorldDataset dataset;
  std::vector<MethodResult> results;
  std::optional<TrainedClassifier> coop;
  std::optional<DecoopModel> decoop;
  std::optional<TheoremReport> theorem;
  std::map<std::string, std::string> artifacts;  // name -> path
};

struct RunOptions {
  /// Entropy margin override for the detectors.
  std::optional<double> margin;
  bool theorem = false;
};

/// The frozen encoder the config describes (shared by every seed).
EncoderPtr make_encoder(const ExperimentConfig &config);
OpenWorldDataset make_dataset(const ExperimentConfig &config, const FrozenEncoder &enc,
                              std::uint64_t seed);

/// Generate -> train -> evaluate for the configured methods at one seed.
SeedRun run_seed(const ExperimentConfig &config, const EncoderPtr &enc, std::uint64_t seed,
                 const RunOptions &options = {});

struct SummaryStat {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over seeds
};

struct RunManifest {
  ExperimentConfig config;
  std::vector<SeedRun> runs;
  std::map<std::string, std::map<std::string, SummaryStat>> summary;  // method -> metric -> stat
  std::filesystem::path results_csv;
};

const MethodResult &find_result(const SeedRun &run, const std::string &method);

/// `run`: writes results.csv, per-seed artifacts and manifest.json.
RunManifest cmd_run(const ExperimentConfig &config);

struct TheoremRun {
  std::vector<TheoremReport> reports;
  std::vector<std::filesystem::path> files;
  bool all_hold = false;
  bool all_valid = false;
};
/// `theorem`: one key-value report per seed.
TheoremRun cmd_theorem(const ExperimentConfig &config);

struct SweepRow {
  double margin;
  std::uint64_t seed;
  EvalReport report;
};
/// `sweep-gamma`: retrains the DeCoOp pipeline per margin; writes sweep_gamma.csv.
std::vector<SweepRow> cmd_sweep_gamma(const ExperimentConfig &config,
                                      const std::vector<double> &margins);

struct RocExport {
  std::string method;
  std::uint64_t seed;
  RocCurve curve;
  double auroc;
  std::filesystem::path file;
};
/// `roc`: ROC CSVs for zero-shot MSP, CoOp MSP and the DeCoOp detector score.
std::vector<RocExport> cmd_roc(const ExperimentConfig &config);

/// `gen-data`: writes one dataset file per seed.
std::vector<std::filesystem::path> cmd_gen_data(const ExperimentConfig &config);

}  // namespace decoop
