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

#include "decoop/zeroshot.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <random>

using namespace decoop;
using namespace decoop::testing;

namespace {

ProbabilityDistribution make_dist(std::vector<ClassId> support, std::vector<double> p) {
  ProbabilityDistribution d;
  d.support = std::move(support);
  d.probs = Eigen::Map<const Vector>(p.data(), static_cast<Eigen::Index>(p.size()));
  return d;
}

}  // namespace

TEST_CASE("a one-prompt ensemble is the plain prompt classifier") {
  auto enc = small_encoder(6, 4);
  std::mt19937_64 rng(1);
  const PromptVector p = PromptVector::random(3, 5, 0.3, 2);
  const ZeroShotModel zs(enc, {p}, Temperature(0.1));
  const auto support = iota_classes(6);
  for (int i = 0; i < 20; ++i) {
    const Vector z = random_unit(4, rng);
    const auto a = zs.predict(support, z);
    const auto b = classify(*enc, p, support, Temperature(0.1), z);
    CHECK((a.probs - b.probs).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("repeating a prompt does not change the ensemble") {
  auto enc = small_encoder(6, 4);
  std::mt19937_64 rng(2);
  const PromptVector p = PromptVector::random(2, 5, 0.3, 8);
  const ZeroShotModel one(enc, {p}), two(enc, {p, p});
  const auto support = iota_classes(6);
  for (int i = 0; i < 20; ++i) {
    const Vector z = random_unit(4, rng);
    CHECK((one.predict(support, z).probs - two.predict(support, z).probs).cwiseAbs().maxCoeff() <
          1e-14);
  }
}

TEST_CASE("restricting the full prediction equals predicting over the subset") {
  auto enc = small_encoder(8, 5);
  const auto zs = ZeroShotModel::seeded(enc, 3, 2, 99, Temperature(0.2), 0.3);
  std::mt19937_64 rng(3);
  const std::vector<ClassId> subset{6, 1, 3};
  for (int i = 0; i < 50; ++i) {
    const Vector z = random_unit(4, rng);
    const auto full = zs.predict(iota_classes(8), z);
    const auto restricted = full.restrict_to(subset);
    const auto direct = zs.predict(subset, z);
    REQUIRE(restricted.support == direct.support);
    CHECK((restricted.probs - direct.probs).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("seeded ensembles are reproducible and validated") {
  auto enc = small_encoder();
  const auto a = ZeroShotModel::seeded(enc, 4, 3, 17);
  const auto b = ZeroShotModel::seeded(enc, 4, 3, 17);
  REQUIRE(a.prompts().size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a.prompts()[i] == b.prompts()[i]);
  CHECK_FALSE(a.prompts()[0] == a.prompts()[1]);
  CHECK_THROWS_AS(ZeroShotModel(enc, {}), std::invalid_argument);
  CHECK_THROWS_AS(a.predict({}, Vector::Ones(4).normalized()), std::invalid_argument);
}

TEST_CASE("msp space scores") {
  const ClassSpace space(4, {0, 1});
  SUBCASE("argmax on the base side makes the base score larger") {
    const auto d = make_dist({0, 1, 2, 3}, {0.1, 0.5, 0.3, 0.1});
    const auto s = msp_space_scores(d, space);
    CHECK(s.base == 0.5);
    CHECK(s.novel == 0.3);
    CHECK(msp_prefers_base(s));
  }
  SUBCASE("one class per side: the two scores sum to one") {
    const ClassSpace two(2, {1});
    const auto d = make_dist({0, 1}, {0.35, 0.65});
    const auto s = msp_space_scores(d, two);
    CHECK(s.base + s.novel == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("uniform probabilities give 1/C on both sides and route to base") {
    const auto d = make_dist({0, 1, 2, 3}, {0.25, 0.25, 0.25, 0.25});
    const auto s = msp_space_scores(d, space);
    CHECK(s.base == 0.25);
    CHECK(s.novel == 0.25);
    CHECK(msp_prefers_base(s));
  }
}

TEST_CASE("space mass") {
  const ClassSpace ten(10, {0, 2, 4, 6, 8});
  std::vector<double> u(10, 0.1);
  const auto s = mass_space_probability(make_dist(iota_classes(10), u), ten);
  CHECK(s.base == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.novel == doctest::Approx(0.5).epsilon(1e-15));

  auto enc = small_encoder(10, 6);
  const auto zs = ZeroShotModel::seeded(enc, 2, 3, 5, Temperature(0.05), 0.3);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const Vector z = random_unit(4, rng);
    const auto m = mass_space_probability(zs, ten, z);
    CHECK(m.base + m.novel == doctest::Approx(1.0).epsilon(1e-14));
    const auto msp = msp_space_scores(zs, ten, z);
    CHECK(msp.base <= m.base + 1e-15);
    CHECK(msp.novel <= m.novel + 1e-15);
  }
}
