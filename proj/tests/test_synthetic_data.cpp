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

#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

using namespace decoop;
using namespace decoop::testing;

namespace {

EncoderPtr encoder_for(const DatasetSpec &s, std::uint64_t seed = 11) {
  EncoderDims d;
  d.token_dim = 10;
  d.embed_dim = 8;
  d.feature_dim = s.feature_dim;
  d.num_classes = s.num_classes;
  return std::make_shared<const FrozenEncoder>(d, seed);
}

DatasetSpec ten_class_spec(std::uint64_t seed = 4) {
  DatasetSpec s = small_spec(seed);
  s.num_classes = 10;
  s.shots_per_class = 16;
  return s;
}

bool same_examples(const std::vector<LabeledExample> &a, const std::vector<LabeledExample> &b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].label != b[i].label || a[i].space != b[i].space || a[i].feature != b[i].feature)
      return false;
  return true;
}

}  // namespace

TEST_CASE("ten classes at base fraction one half split five and five") {
  const DatasetSpec s = ten_class_spec();
  const auto ds = generate(s, *encoder_for(s));
  CHECK(ds.class_space.base().size() == 5);
  CHECK(ds.class_space.novel().size() == 5);
  // 16 shots for each of the 5 base classes, none for new classes.
  CHECK(ds.train.size() == 80);
  for (const auto &ex : ds.train) CHECK(ds.class_space.is_base(ex.label));
}

TEST_CASE("zero noise puts every sample on its prototype") {
  DatasetSpec s = small_spec(2);
  s.noise_sigma = 0.0;
  const auto ds = generate(s, *encoder_for(s));
  for (const auto *split : {&ds.train, &ds.test})
    for (const auto &ex : *split) CHECK(ex.feature == ds.prototypes.col(ex.label));
}

TEST_CASE("prototypes are unit and pairwise separated") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    DatasetSpec s = small_spec(seed);
    s.min_separation = 0.3;
    const auto ds = generate(s, *encoder_for(s));
    for (int a = 0; a < s.num_classes; ++a) {
      CHECK(ds.prototypes.col(a).norm() == doctest::Approx(1.0).epsilon(1e-12));
      for (int b = 0; b < a; ++b)
        CHECK(1.0 - ds.prototypes.col(a).dot(ds.prototypes.col(b)) >= 0.3);
    }
  }
}

TEST_CASE("unreachable separation is reported") {
  DatasetSpec s = small_spec(1);
  s.min_separation = 2.0;
  CHECK_THROWS_WITH_AS(generate(s, *encoder_for(s)), "prototype separation failed",
                       std::runtime_error);
}

TEST_CASE("spec validation and encoder mismatch") {
  DatasetSpec s = small_spec(1);
  s.base_fraction = 1.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = small_spec(1);
  s.num_classes = 3;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = small_spec(1);
  s.noise_sigma = -0.1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = small_spec(1);
  auto enc = encoder_for(s);
  s.feature_dim = 13;
  CHECK_THROWS_AS(generate(s, *enc), std::invalid_argument);
}

TEST_CASE("regeneration with the same seed is bitwise identical") {
  const DatasetSpec s = small_spec(9);
  const auto enc = encoder_for(s);
  const auto a = generate(s, *enc), b = generate(s, *enc);
  CHECK(a.prototypes == b.prototypes);
  CHECK(a.class_space.base() == b.class_space.base());
  CHECK(same_examples(a.train, b.train));
  CHECK(same_examples(a.test, b.test));
  const auto c = generate(small_spec(10), *enc);
  CHECK_FALSE(same_examples(a.test, c.test));
}

TEST_CASE("tags agree with the partition and the test mix follows the ratio") {
  for (double ratio : {0.2, 0.5, 0.7}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      DatasetSpec s = small_spec(seed);
      s.mixing_ratio = ratio;
      s.test_per_class = 7;
      const auto ds = generate(s, *encoder_for(s));
      const std::set<ClassId> base(ds.class_space.base().begin(), ds.class_space.base().end());
      std::size_t n_base = 0;
      for (const auto &ex : ds.test) {
        CHECK(ex.space == ds.class_space.tag(ex.label));
        CHECK((ex.space == SpaceTag::kBase) == (base.count(ex.label) == 1));
        n_base += ex.space == SpaceTag::kBase;
      }
      CHECK(ds.test.size() == static_cast<std::size_t>(7 * s.num_classes));
      const double alpha = static_cast<double>(n_base) / static_cast<double>(ds.test.size());
      CHECK(std::abs(alpha - ratio) <= 1.0 / static_cast<double>(ds.test.size()));
    }
  }
}

TEST_CASE("simulated splits") {
  const DatasetSpec s = ten_class_spec(6);
  const auto ds = generate(s, *encoder_for(s));
  const auto &base = ds.class_space.base();

  SUBCASE("empty simulated new set keeps everything on the base side") {
    const auto split = split_simulated(ds, base, {});
    CHECK(split.novel.empty());
    CHECK(split.base.size() == ds.train.size());
  }
  SUBCASE("every base class held out leaves the simulated base side empty") {
    const auto split = split_simulated(ds, {}, base);
    CHECK(split.base.empty());
    CHECK(split.novel.size() == ds.train.size());
  }
  SUBCASE("two of five classes held out gives 32 simulated new examples") {
    const std::vector<ClassId> sim_new{base[1], base[3]};
    const std::vector<ClassId> sim_base{base[0], base[2], base[4]};
    const auto split = split_simulated(ds, sim_base, sim_new);
    CHECK(split.novel.size() == 32);
    CHECK(split.base.size() == 48);
    for (const auto &ex : split.novel)
      CHECK((ex.label == base[1] || ex.label == base[3]));
  }
  SUBCASE("a partition that is not a disjoint cover is rejected") {
    const std::vector<ClassId> missing{base[0], base[1]};
    CHECK_THROWS_AS(split_simulated(ds, missing, {}), std::invalid_argument);
    const std::vector<ClassId> twice{base[0]};
    CHECK_THROWS_AS(split_simulated(ds, base, twice), std::invalid_argument);
    const std::vector<ClassId> with_new{ds.class_space.novel()[0]};
    CHECK_THROWS_AS(split_simulated(ds, base, with_new), std::invalid_argument);
  }
}

TEST_CASE("dataset files round-trip exactly") {
  DatasetSpec s = small_spec(3);
  s.mixing_ratio = 0.35;
  const auto ds = generate(s, *encoder_for(s));
  std::stringstream buf;
  write_dataset(buf, ds);
  const auto back = read_dataset(buf);
  CHECK(back.spec.seed == s.seed);
  CHECK(back.spec.mixing_ratio == s.mixing_ratio);
  CHECK(back.class_space.base() == ds.class_space.base());
  CHECK(back.prototypes == ds.prototypes);
  CHECK(same_examples(back.train, ds.train));
  CHECK(same_examples(back.test, ds.test));
}

TEST_CASE("malformed dataset files") {
  std::istringstream empty("");
  CHECK_THROWS_AS(read_dataset(empty), FormatError);
  std::istringstream wrong("hello,world\n");
  CHECK_THROWS_AS(read_dataset(wrong), FormatError);

  DatasetSpec s = small_spec(3);
  const auto ds = generate(s, *encoder_for(s));
  std::stringstream buf;
  write_dataset(buf, ds);
  std::string text = buf.str();
  text += "test,0,base,1\n";
  std::istringstream short_row(text);
  CHECK_THROWS_AS(read_dataset(short_row), FormatError);
}
