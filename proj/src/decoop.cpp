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

#include "decoop/decoop.hpp"

#include "keyvalue.hpp"
#include "seeding.hpp"
#include "text_format.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

namespace decoop {
namespace {

constexpr const char *kBundleTag = "decoop-bundle/1";
constexpr double kOtsuTieTolerance = 1e-12;

std::vector<ClassId> sorted(std::vector<ClassId> v) {
  std::sort(v.begin(), v.end());
  return v;
}

// Training-time scores: base vocabulary, max over the simulated base classes.
std::vector<double> training_scores(const FrozenEncoder &enc, const TrainedDetector &det,
                                    const ClassSpace &space, Temperature temp,
                                    std::span<const LossExample> examples) {
  const auto head = TextHead::from_prompt(enc, det.prompt, space.base(), temp);
  std::vector<double> scores;
  scores.reserve(examples.size());
  for (const auto &ex : examples) scores.push_back(detector_score(head, det.partition, ex.z));
  return scores;
}

std::string read_value(std::istream &in, std::string_view key) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("truncated bundle");
  const auto eq = line.find('=');
  if (eq == std::string::npos || std::string_view(line).substr(0, eq) != key)
    throw FormatError("expected '" + std::string(key) + "=' in bundle");
  return line.substr(eq + 1);
}

std::vector<double> parse_doubles(std::string_view s) {
  std::vector<double> out;
  for (auto part : text::split(text::trim(s), ' '))
    if (!text::trim(part).empty()) out.push_back(text::parse_double(part));
  return out;
}

void write_doubles(std::ostream &out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i)
    out << (i ? " " : "") << text::format_double(values[i]);
}

}  // namespace

std::vector<DetectorPartition> partition_classes(std::span<const ClassId> base, int folds,
                                                 std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("need at least two detectors");
  if (base.size() < static_cast<std::size_t>(folds))
    throw std::invalid_argument("fewer base classes than detectors");
  std::vector<ClassId> order(base.begin(), base.end());
  std::mt19937_64 rng(derive_seed(seed, 0x666f6c64ULL));
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t k = static_cast<std::size_t>(folds);
  const std::size_t small = order.size() / k;
  const std::size_t extra = order.size() % k;
  std::vector<DetectorPartition> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t size = small + (i < extra ? 1 : 0);
    DetectorPartition p;
    p.index = static_cast<int>(i) + 1;
    for (std::size_t j = 0; j < order.size(); ++j)
      (j >= start && j < start + size ? p.sim_new : p.sim_base).push_back(order[j]);
    p.sim_new = sorted(std::move(p.sim_new));
    p.sim_base = sorted(std::move(p.sim_base));
    parts.push_back(std::move(p));
    start += size;
  }
  return parts;
}

std::vector<ClassId> test_vocabulary(const DetectorPartition &partition, const ClassSpace &space) {
  std::vector<ClassId> vocab = partition.sim_base;
  vocab.insert(vocab.end(), space.novel().begin(), space.novel().end());
  return vocab;
}

double detector_score(const TextHead &head, const DetectorPartition &partition, const Vector &z) {
  const auto dist = head.predict(z);
  double best = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < dist.support.size(); ++i) {
    const ClassId c = dist.support[i];
    if (std::find(partition.sim_base.begin(), partition.sim_base.end(), c) ==
        partition.sim_base.end())
      continue;
    best = std::max(best, dist.probs[static_cast<Eigen::Index>(i)]);
    any = true;
  }
  if (!any) throw std::invalid_argument("vocabulary must contain the simulated base classes");
  return best;
}

double detector_score(const FrozenEncoder &enc, const PromptVector &prompt,
                      const DetectorPartition &partition, std::span<const ClassId> vocabulary,
                      Temperature temp, const Vector &z) {
  for (ClassId c : partition.sim_base)
    if (std::find(vocabulary.begin(), vocabulary.end(), c) == vocabulary.end())
      throw std::invalid_argument("vocabulary must contain the simulated base classes");
  const auto head =
      TextHead::from_prompt(enc, prompt, {vocabulary.begin(), vocabulary.end()}, temp);
  return detector_score(head, partition, z);
}

std::vector<Batch> stratified_batches(std::span<const LossExample> base,
                                      std::span<const LossExample> novel, int batch_size,
                                      std::mt19937_64 &rng) {
  if (base.empty() || novel.empty())
    throw std::invalid_argument("stratified batches need both portions");
  const std::size_t total = base.size() + novel.size();
  std::size_t count = (total + static_cast<std::size_t>(batch_size) - 1) /
                      static_cast<std::size_t>(batch_size);
  count = std::min({count, base.size(), novel.size()});

  auto chunks = [&](std::span<const LossExample> part) {
    std::vector<std::size_t> order(part.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Batch> out(count);
    for (std::size_t i = 0; i < order.size(); ++i) out[i * count / order.size()].push_back(part[order[i]]);
    return out;
  };
  auto batches = chunks(base);
  auto novel_chunks = chunks(novel);
  for (std::size_t b = 0; b < count; ++b)
    batches[b].insert(batches[b].end(), novel_chunks[b].begin(), novel_chunks[b].end());
  return batches;
}

TrainedDetector train_detector(const FrozenEncoder &enc, const OpenWorldDataset &dataset,
                               const DetectorPartition &partition, const TrainConfig &cfg,
                               Temperature temp) {
  const auto split = split_simulated(dataset, partition.sim_base, partition.sim_new);
  if (split.base.empty() || split.novel.empty())
    throw std::invalid_argument("detector needs simulated base and new training data");
  const auto base = to_loss_examples(enc, split.base, SpaceTag::kBase);
  const auto novel = to_loss_examples(enc, split.novel, SpaceTag::kNew);
  BatchPlan plan = [&](int, std::mt19937_64 &rng) {
    return stratified_batches(base, novel, cfg.batch_size, rng);
  };
  auto fit = run_sgd(enc, initial_prompt(enc, cfg, cfg.seed), dataset.class_space.base(), temp,
                     cfg, EntropyMarginLoss{cfg.margin}, plan);
  return {partition, std::move(fit.prompt), std::move(fit.loss_history)};
}

double between_class_variance(std::span<const double> scores, double threshold) {
  double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
  for (double s : scores) {
    if (s < threshold) {
      n0 += 1;
      s0 += s;
    } else {
      n1 += 1;
      s1 += s;
    }
  }
  if (n0 == 0 || n1 == 0) return 0.0;
  const double n = n0 + n1;
  const double diff = s0 / n0 - s1 / n1;
  return (n0 / n) * (n1 / n) * diff * diff;
}

double otsu_threshold(std::span<const double> scores) {
  std::vector<double> values(scores.begin(), scores.end());
  std::sort(values.begin(), values.end());
  std::vector<double> unique = values;
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  if (unique.size() < 2) throw std::invalid_argument("degenerate score distribution");

  // One pass over the sorted samples with running lower-class sums.
  const double n = static_cast<double>(values.size());
  double total = 0.0;
  for (double v : values) total += v;
  std::vector<double> variances;
  double n0 = 0.0, s0 = 0.0;
  std::size_t idx = 0;
  for (std::size_t k = 0; k + 1 < unique.size(); ++k) {
    while (idx < values.size() && values[idx] <= unique[k]) {
      n0 += 1.0;
      s0 += values[idx];
      ++idx;
    }
    const double n1 = n - n0;
    const double diff = s0 / n0 - (total - s0) / n1;
    variances.push_back((n0 / n) * (n1 / n) * diff * diff);
  }
  const double top = *std::max_element(variances.begin(), variances.end());
  std::size_t pick = 0;
  while (variances[pick] < top - kOtsuTieTolerance * top) ++pick;
  return 0.5 * (unique[pick] + unique[pick + 1]);
}

TrainedClassifier train_subclassifier(const FrozenEncoder &enc, const OpenWorldDataset &dataset,
                                      const TrainedDetector &detector, double threshold,
                                      const ZeroShotModel &zs, const TrainConfig &cfg,
                                      Temperature temp) {
  const ClassSpace &space = dataset.class_space;
  auto examples = to_loss_examples(enc, dataset.train);
  const auto scores = training_scores(enc, detector, space, temp, examples);
  const auto zs_head = zs.head(space.base());
  bool any_kept = false;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (scores[i] >= threshold) {
      examples[i].portion = SpaceTag::kBase;
      any_kept = true;
    } else {
      examples[i].portion = SpaceTag::kNew;
      examples[i].reference = zs_head.predict(examples[i].z).probs;
    }
  }
  if (!any_kept) throw std::runtime_error("detector rejects all training data");

  BatchPlan plan = [&](int, std::mt19937_64 &rng) {
    return shuffled_batches(examples, cfg.batch_size, rng);
  };
  auto fit = run_sgd(enc, initial_prompt(enc, cfg, cfg.seed), space.base(), temp, cfg, CeKlLoss{},
                     plan);
  return {std::move(fit.prompt), space.base(), std::move(fit.loss_history)};
}

DecoopModel::DecoopModel(DetectorEnsemble ensemble, std::vector<TrainedClassifier> sub_classifiers,
                         ZeroShotModel zs, ClassSpace space, DecoopConfig config)
    : ensemble_(std::move(ensemble)),
      sub_classifiers_(std::move(sub_classifiers)),
      zs_(std::move(zs)),
      space_(std::move(space)),
      config_(config),
      zs_head_(zs_.head(space_.all())) {
  const std::size_t k = ensemble_.detectors.size();
  if (k < 2 || sub_classifiers_.size() != k || ensemble_.thresholds.size() != k)
    throw std::invalid_argument("detector, threshold and sub-classifier counts must match");
  std::vector<int> covered(static_cast<std::size_t>(space_.num_classes()), 0);
  for (const auto &d : ensemble_.detectors)
    for (ClassId c : d.partition.sim_new) ++covered.at(static_cast<std::size_t>(c));
  for (ClassId c : space_.base())
    if (covered[static_cast<std::size_t>(c)] == 0)
      throw std::invalid_argument("every base class must be simulated new for some detector");

  const FrozenEncoder &enc = zs_.encoder();
  const Temperature temp = zs_.temperature();
  for (std::size_t i = 0; i < k; ++i) {
    const auto &det = ensemble_.detectors[i];
    detector_heads_.push_back(
        TextHead::from_prompt(enc, det.prompt, test_vocabulary(det.partition, space_), temp));
    sub_heads_.push_back(
        TextHead::from_prompt(enc, sub_classifiers_[i].prompt, space_.all(), temp));
  }
}

std::vector<double> DecoopModel::detector_scores(const Vector &z) const {
  std::vector<double> scores;
  scores.reserve(detector_heads_.size());
  for (std::size_t i = 0; i < detector_heads_.size(); ++i)
    scores.push_back(detector_score(detector_heads_[i], ensemble_.detectors[i].partition, z));
  return scores;
}

DecoopModel train_decoop(const FrozenEncoder &enc, const OpenWorldDataset &dataset,
                         const ZeroShotModel &zs, const DecoopConfig &config, Temperature temp) {
  const ClassSpace &space = dataset.class_space;
  const auto partitions = partition_classes(space.base(), config.folds, config.detector.seed);
  const auto train = to_loss_examples(enc, dataset.train);

  DetectorEnsemble ensemble;
  for (std::size_t i = 0; i < partitions.size(); ++i) {
    TrainConfig cfg = config.detector;
    cfg.seed += i;
    auto det = train_detector(enc, dataset, partitions[i], cfg, temp);
    ensemble.thresholds.push_back(otsu_threshold(training_scores(enc, det, space, temp, train)));
    ensemble.detectors.push_back(std::move(det));
  }
  double sum = 0.0;
  for (double t : ensemble.thresholds) sum += t;
  ensemble.threshold = sum / static_cast<double>(ensemble.thresholds.size());

  std::vector<TrainedClassifier> subs;
  for (std::size_t i = 0; i < ensemble.detectors.size(); ++i) {
    TrainConfig cfg = config.classifier;
    cfg.seed += i;
    subs.push_back(train_subclassifier(enc, dataset, ensemble.detectors[i], ensemble.threshold, zs,
                                       cfg, temp));
  }
  return DecoopModel(std::move(ensemble), std::move(subs), zs, space, config);
}

std::optional<std::size_t> route(std::span<const double> scores, double threshold) {
  if (scores.empty()) throw std::invalid_argument("no detector scores");
  const auto best = std::max_element(scores.begin(), scores.end());  // first maximum
  if (*best < threshold) return std::nullopt;
  return static_cast<std::size_t>(best - scores.begin());
}

DecoopPrediction decoop_predict(const DecoopModel &model, const Vector &z) {
  const auto scores = model.detector_scores(z);
  const auto pick = route(scores, model.ensemble().threshold);
  if (!pick) return {model.zs_full(z).argmax(), std::nullopt};
  return {model.sub_classifier_full(*pick, z).argmax(), pick};
}

double decoop_new_score(const DecoopModel &model, const Vector &z) {
  const auto scores = model.detector_scores(z);
  return *std::max_element(scores.begin(), scores.end());
}

void save_bundle(std::ostream &out, const DecoopModel &model) {
  const auto &space = model.class_space();
  const auto &ens = model.ensemble();
  out << kBundleTag << '\n'
      << "temperature=" << text::format_double(model.zs().temperature().value()) << '\n'
      << "num_classes=" << space.num_classes() << '\n'
      << "base_classes=" << text::join_ints(space.base()) << '\n'
      << "folds=" << model.folds() << '\n'
      << "threshold=" << text::format_double(ens.threshold) << '\n';
  write_train_config(out, model.config().detector, "detector.");
  write_train_config(out, model.config().classifier, "classifier.");
  out << "zs_prompts=" << model.zs().prompts().size() << '\n';
  for (const auto &p : model.zs().prompts()) write_prompt(out, p);
  for (std::size_t i = 0; i < ens.detectors.size(); ++i) {
    const auto &det = ens.detectors[i];
    const auto &sub = model.sub_classifiers()[i];
    out << "detector=" << det.partition.index << '\n'
        << "sim_base=" << text::join_ints(det.partition.sim_base) << '\n'
        << "sim_new=" << text::join_ints(det.partition.sim_new) << '\n'
        << "detector_threshold=" << text::format_double(ens.thresholds[i]) << '\n'
        << "detector_loss_history=";
    write_doubles(out, det.loss_history);
    out << '\n';
    write_prompt(out, det.prompt);
    out << "classifier_support=" << text::join_ints(sub.support) << '\n'
        << "classifier_loss_history=";
    write_doubles(out, sub.loss_history);
    out << '\n';
    write_prompt(out, sub.prompt);
  }
}

DecoopModel load_bundle(std::istream &in, EncoderPtr enc) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != kBundleTag)
    throw FormatError("not a model bundle");
  const Temperature temp(text::parse_double(read_value(in, "temperature")));
  const int num_classes = text::parse_int<int>(read_value(in, "num_classes"));
  ClassSpace space(num_classes, text::parse_int_list(read_value(in, "base_classes")));
  const int folds = text::parse_int<int>(read_value(in, "folds"));
  DetectorEnsemble ens;
  ens.threshold = text::parse_double(read_value(in, "threshold"));
  DecoopConfig config;
  config.folds = folds;
  {
    KeyValueReader kv(in, 2 * kTrainConfigFields);
    config.detector = read_train_config(kv, "detector.");
    config.classifier = read_train_config(kv, "classifier.");
  }
  const int zs_count = text::parse_int<int>(read_value(in, "zs_prompts"));
  std::vector<PromptVector> zs_prompts;
  for (int i = 0; i < zs_count; ++i) zs_prompts.push_back(read_prompt(in));

  std::vector<TrainedClassifier> subs;
  for (int i = 0; i < folds; ++i) {
    DetectorPartition part;
    part.index = text::parse_int<int>(read_value(in, "detector"));
    part.sim_base = text::parse_int_list(read_value(in, "sim_base"));
    part.sim_new = text::parse_int_list(read_value(in, "sim_new"));
    ens.thresholds.push_back(text::parse_double(read_value(in, "detector_threshold")));
    auto history = parse_doubles(read_value(in, "detector_loss_history"));
    auto prompt = read_prompt(in);
    ens.detectors.push_back({std::move(part), std::move(prompt), std::move(history)});
    auto support = text::parse_int_list(read_value(in, "classifier_support"));
    auto sub_history = parse_doubles(read_value(in, "classifier_loss_history"));
    auto sub_prompt = read_prompt(in);
    subs.push_back({std::move(sub_prompt), std::move(support), std::move(sub_history)});
  }
  ZeroShotModel zs(std::move(enc), std::move(zs_prompts), temp);
  return DecoopModel(std::move(ens), std::move(subs), std::move(zs), std::move(space), config);
}

}  // namespace decoop
