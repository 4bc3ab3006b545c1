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

#include "decoop/synthetic_data.hpp"

#include "seeding.hpp"
#include "text_format.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string>

namespace decoop {
namespace {

constexpr int kMaxSeparationAttempts = 10000;
constexpr const char *kHeaderTag = "decoop-dataset/1";

Vector random_unit(int dim, std::mt19937_64 &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  do {
    for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  } while (v.norm() == 0.0);
  return v.normalized();
}

// Feature-space direction that the image map sends onto the class's own text
// direction W_T t_c (the small-activation limit of its text embedding).
Matrix class_directions(const FrozenEncoder &enc, int num_classes) {
  const Matrix text_dirs = enc.text_map() * enc.class_tokens().leftCols(num_classes);
  const Matrix pulled = enc.image_map().completeOrthogonalDecomposition().solve(text_dirs);
  Matrix out = pulled;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const double norm = out.col(c).norm();
    if (norm > 0.0) out.col(c) /= norm;
  }
  return out;
}

std::vector<int> spread(int total, int bins) {
  std::vector<int> counts(static_cast<std::size_t>(bins), total / bins);
  for (int i = 0; i < total % bins; ++i) ++counts[static_cast<std::size_t>(i)];
  return counts;
}

void sample_into(std::vector<LabeledExample> &out, const Vector &prototype, ClassId label,
                 SpaceTag space, int count, double sigma, std::mt19937_64 &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int k = 0; k < count; ++k) {
    Vector f = prototype;
    if (sigma > 0.0)
      for (Eigen::Index i = 0; i < f.size(); ++i) f[i] += sigma * normal(rng);
    out.push_back({std::move(f), label, space});
  }
}

}  // namespace

void DatasetSpec::validate() const {
  if (num_classes < 4) throw std::invalid_argument("dataset needs at least 4 classes");
  if (feature_dim < 1) throw std::invalid_argument("feature_dim must be positive");
  if (!(base_fraction > 0.0 && base_fraction < 1.0))
    throw std::invalid_argument("base_fraction must lie in (0, 1)");
  if (!(mixing_ratio > 0.0 && mixing_ratio < 1.0))
    throw std::invalid_argument("mixing_ratio must lie in (0, 1)");
  if (shots_per_class < 1) throw std::invalid_argument("shots_per_class must be >= 1");
  if (test_per_class < 1) throw std::invalid_argument("test_per_class must be >= 1");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
  if (!(alignment >= 0.0)) throw std::invalid_argument("alignment must be >= 0");
  if (!(min_separation >= 0.0 && min_separation <= 2.0))
    throw std::invalid_argument("min_separation must lie in [0, 2]");
  const int base = static_cast<int>(std::ceil(num_classes * base_fraction));
  if (base >= num_classes) throw std::invalid_argument("base_fraction leaves no new classes");
}

OpenWorldDataset generate(const DatasetSpec &spec, const FrozenEncoder &enc) {
  spec.validate();
  if (enc.num_classes() != spec.num_classes)
    throw std::invalid_argument("encoder and dataset disagree on class count");
  if (enc.feature_dim() != spec.feature_dim)
    throw std::invalid_argument("encoder and dataset disagree on feature_dim");

  const int dim = spec.feature_dim;
  const int classes = spec.num_classes;

  // Prototypes, resampled class by class until pairwise separation holds.
  std::mt19937_64 proto_rng(derive_seed(spec.seed, 0x70726f746fULL));
  const Matrix anchors = class_directions(enc, classes);
  Matrix prototypes(dim, classes);
  int attempts = 0;
  for (int c = 0; c < classes; ++c) {
    while (true) {
      if (++attempts > kMaxSeparationAttempts)
        throw std::runtime_error("prototype separation failed");
      Vector candidate = spec.alignment * anchors.col(c) + random_unit(dim, proto_rng);
      if (candidate.norm() == 0.0) continue;
      candidate.normalize();
      bool ok = true;
      for (int prev = 0; prev < c && ok; ++prev)
        ok = 1.0 - candidate.dot(prototypes.col(prev)) >= spec.min_separation;
      if (ok) {
        prototypes.col(c) = candidate;
        break;
      }
    }
  }

  std::mt19937_64 split_rng(derive_seed(spec.seed, 0x73706c6974ULL));
  std::vector<ClassId> order(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) order[static_cast<std::size_t>(c)] = c;
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto base_count = static_cast<std::size_t>(std::ceil(classes * spec.base_fraction));
  std::vector<ClassId> base(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(base_count));

  OpenWorldDataset ds{spec, ClassSpace(classes, base), prototypes, {}, {}};
  const ClassSpace &space = ds.class_space;

  std::mt19937_64 train_rng(derive_seed(spec.seed, 0x747261696eULL));
  for (ClassId c : space.base())
    sample_into(ds.train, prototypes.col(c), c, SpaceTag::kBase, spec.shots_per_class,
                spec.noise_sigma, train_rng);

  const int total = spec.test_per_class * classes;
  const int base_total = static_cast<int>(std::lround(spec.mixing_ratio * total));
  const auto base_counts = spread(base_total, static_cast<int>(space.base().size()));
  const auto new_counts = spread(total - base_total, static_cast<int>(space.novel().size()));
  std::mt19937_64 test_rng(derive_seed(spec.seed, 0x74657374ULL));
  std::size_t bi = 0, ni = 0;
  for (ClassId c : space.all()) {
    const bool is_base = space.is_base(c);
    const int count = is_base ? base_counts[bi++] : new_counts[ni++];
    sample_into(ds.test, prototypes.col(c), c, space.tag(c), count, spec.noise_sigma, test_rng);
  }
  return ds;
}

SimulatedSplit split_simulated(const OpenWorldDataset &dataset,
                               std::span<const ClassId> sim_base,
                               std::span<const ClassId> sim_new) {
  const ClassSpace &space = dataset.class_space;
  std::vector<int> seen(static_cast<std::size_t>(space.num_classes()), 0);
  for (auto part : {sim_base, sim_new})
    for (ClassId c : part) {
      if (c < 0 || c >= space.num_classes() || !space.is_base(c))
        throw std::invalid_argument("partition is not a disjoint cover of the base classes");
      ++seen[static_cast<std::size_t>(c)];
    }
  for (ClassId c : space.base())
    if (seen[static_cast<std::size_t>(c)] != 1)
      throw std::invalid_argument("partition is not a disjoint cover of the base classes");

  SimulatedSplit out;
  for (const auto &ex : dataset.train) {
    const bool is_new = std::find(sim_new.begin(), sim_new.end(), ex.label) != sim_new.end();
    (is_new ? out.novel : out.base).push_back(ex);
  }
  return out;
}

void write_dataset(std::ostream &out, const OpenWorldDataset &ds) {
  const DatasetSpec &s = ds.spec;
  using text::format_double;
  out << kHeaderTag << ",num_classes=" << s.num_classes << ",feature_dim=" << s.feature_dim
      << ",noise_sigma=" << format_double(s.noise_sigma)
      << ",min_separation=" << format_double(s.min_separation)
      << ",shots_per_class=" << s.shots_per_class << ",test_per_class=" << s.test_per_class
      << ",mixing_ratio=" << format_double(s.mixing_ratio)
      << ",base_fraction=" << format_double(s.base_fraction)
      << ",alignment=" << format_double(s.alignment) << ",seed=" << s.seed
      << ",base_classes=" << text::join_ints(ds.class_space.base()) << '\n';

  auto row = [&out](const char *split, ClassId label, SpaceTag tag, const auto &values) {
    out << split << ',' << label << ',' << to_string(tag);
    for (Eigen::Index i = 0; i < values.size(); ++i) out << ',' << format_double(values[i]);
    out << '\n';
  };
  for (ClassId c = 0; c < ds.class_space.num_classes(); ++c)
    row("prototype", c, ds.class_space.tag(c), ds.prototypes.col(c));
  for (const auto &ex : ds.train) row("train", ex.label, ex.space, ex.feature);
  for (const auto &ex : ds.test) row("test", ex.label, ex.space, ex.feature);
}

OpenWorldDataset read_dataset(std::istream &in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset file is empty");
  const auto fields = text::split(line, ',');
  if (fields.empty() || fields[0] != kHeaderTag) throw FormatError("not a dataset file");

  std::map<std::string, std::string, std::less<>> kv;
  for (std::size_t i = 1; i < fields.size(); ++i) {
    const auto eq = fields[i].find('=');
    if (eq == std::string_view::npos) throw FormatError("malformed header field");
    kv.emplace(std::string(fields[i].substr(0, eq)), std::string(fields[i].substr(eq + 1)));
  }
  auto get = [&kv](const char *key) -> const std::string & {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("dataset header lacks ") + key);
    return it->second;
  };

  DatasetSpec s;
  s.num_classes = text::parse_int<int>(get("num_classes"));
  s.feature_dim = text::parse_int<int>(get("feature_dim"));
  s.noise_sigma = text::parse_double(get("noise_sigma"));
  s.min_separation = text::parse_double(get("min_separation"));
  s.shots_per_class = text::parse_int<int>(get("shots_per_class"));
  s.test_per_class = text::parse_int<int>(get("test_per_class"));
  s.mixing_ratio = text::parse_double(get("mixing_ratio"));
  s.base_fraction = text::parse_double(get("base_fraction"));
  s.alignment = text::parse_double(get("alignment"));
  s.seed = text::parse_int<std::uint64_t>(get("seed"));
  s.validate();

  OpenWorldDataset ds{s, ClassSpace(s.num_classes, text::parse_int_list(get("base_classes"))),
                      Matrix::Zero(s.feature_dim, s.num_classes), {}, {}};
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const auto cols = text::split(line, ',');
    if (cols.size() != static_cast<std::size_t>(3 + s.feature_dim))
      throw FormatError("dataset row has wrong column count");
    LabeledExample ex;
    ex.label = text::parse_int<int>(cols[1]);
    if (ex.label < 0 || ex.label >= s.num_classes) throw FormatError("unknown class in row");
    if (cols[2] == "base") ex.space = SpaceTag::kBase;
    else if (cols[2] == "new") ex.space = SpaceTag::kNew;
    else throw FormatError("bad space tag");
    if (ex.space != ds.class_space.tag(ex.label))
      throw FormatError("space tag disagrees with class partition");
    ex.feature.resize(s.feature_dim);
    for (int i = 0; i < s.feature_dim; ++i)
      ex.feature[i] = text::parse_double(cols[static_cast<std::size_t>(3 + i)]);

    if (cols[0] == "prototype") ds.prototypes.col(ex.label) = ex.feature;
    else if (cols[0] == "train") ds.train.push_back(std::move(ex));
    else if (cols[0] == "test") ds.test.push_back(std::move(ex));
    else throw FormatError("unknown split '" + std::string(cols[0]) + "'");
  }
  return ds;
}

}  // namespace decoop
