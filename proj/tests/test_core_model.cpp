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

#include "decoop/core_model.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace decoop;
using namespace decoop::testing;

TEST_CASE("encoder weights are reproducible from the seed") {
  EncoderDims d{5, 4, 6, 3};
  FrozenEncoder a(d, 11), b(d, 11), c(d, 12);
  CHECK(a.text_map() == b.text_map());
  CHECK(a.image_map() == b.image_map());
  CHECK(a.class_tokens() == b.class_tokens());
  CHECK(a.text_map() != c.text_map());
  CHECK(a.text_map().rows() == 4);
  CHECK(a.text_map().cols() == 5);
  CHECK(a.image_map().cols() == 6);
  CHECK(a.num_classes() == 3);
  CHECK(a.text_map().allFinite());
}

TEST_CASE("encoder weight scale is 1/sqrt(token_dim)") {
  EncoderDims d{64, 64, 64, 64};
  FrozenEncoder enc(d, 1);
  const double var = enc.text_map().squaredNorm() / static_cast<double>(enc.text_map().size());
  CHECK(var == doctest::Approx(1.0 / 64.0).epsilon(0.1));
}

TEST_CASE("encoder rejects bad shapes") {
  CHECK_THROWS_AS(FrozenEncoder(EncoderDims{0, 4, 6, 3}, 1), std::invalid_argument);
  CHECK_THROWS_AS(FrozenEncoder(Matrix::Ones(4, 5), Matrix::Ones(3, 6), Matrix::Ones(5, 2)),
                  std::invalid_argument);
  CHECK_THROWS_AS(FrozenEncoder(Matrix::Ones(4, 5), Matrix::Ones(4, 6), Matrix::Ones(3, 2)),
                  std::invalid_argument);
  Matrix bad = Matrix::Ones(4, 5);
  bad(0, 0) = NAN;
  CHECK_THROWS_AS(FrozenEncoder(bad, Matrix::Ones(4, 6), Matrix::Ones(5, 2)),
                  std::invalid_argument);
}

TEST_CASE("text embedding has unit norm and is deterministic") {
  auto enc = small_encoder();
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    PromptVector p = PromptVector::random(3, 5, 0.5, 100 + trial);
    for (ClassId c = 0; c < enc->num_classes(); ++c) {
      const Vector w = text_embedding(*enc, p, c);
      CHECK(std::abs(w.norm() - 1.0) < 1e-9);
      CHECK(w == text_embedding(*enc, p, c));
    }
  }
}

TEST_CASE("text embedding follows mean-pool, map, tanh, normalize") {
  Matrix wt(2, 2);
  wt << 1.0, 0.0, 0.0, 2.0;
  Matrix tokens(2, 1);
  tokens << 0.3, -0.6;
  FrozenEncoder enc(wt, Matrix::Identity(2, 3), tokens);
  Matrix prompt(1, 2);
  prompt << 0.9, 0.3;
  // pooled = ((0.9, 0.3) + (0.3, -0.6)) / 2 = (0.6, -0.15); mapped = (0.6, -0.3)
  Vector a(2);
  a << std::tanh(0.6), std::tanh(-0.3);
  const Vector w = text_embedding(enc, PromptVector(prompt), 0);
  CHECK(w[0] == doctest::Approx(a[0] / a.norm()).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(a[1] / a.norm()).epsilon(1e-14));
}

TEST_CASE("text embedding errors") {
  auto enc = small_encoder();
  PromptVector p = PromptVector::random(2, 5, 0.1, 1);
  CHECK_THROWS_WITH_AS(text_embedding(*enc, p, 99), "unknown class", std::out_of_range);
  CHECK_THROWS_WITH_AS(text_embedding(*enc, p, -1), "unknown class", std::out_of_range);
  CHECK_THROWS_AS(text_embedding(*enc, PromptVector::random(2, 4, 0.1, 1), 0),
                  std::invalid_argument);

  FrozenEncoder zero_tokens(Matrix::Ones(4, 5), Matrix::Ones(4, 6), Matrix::Zero(5, 2));
  CHECK_THROWS_WITH_AS(text_embedding(zero_tokens, PromptVector::zeros(3, 5), 0),
                       "zero-norm embedding", std::domain_error);
}

TEST_CASE("image embedding") {
  auto enc = small_encoder();
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = random_vector(6, rng);
    const Vector z = image_embedding(*enc, x);
    CHECK(std::abs(z.norm() - 1.0) < 1e-9);
    CHECK((image_embedding(*enc, 2.0 * x) - z).cwiseAbs().maxCoeff() < 1e-15);
  }
  CHECK_THROWS_WITH_AS(image_embedding(*enc, Vector::Zero(6)), "zero-norm embedding",
                       std::domain_error);
  CHECK_THROWS_AS(image_embedding(*enc, Vector::Ones(5)), std::invalid_argument);
}

TEST_CASE("prompt vector invariants") {
  CHECK_THROWS_AS(PromptVector(Matrix(0, 4)), std::invalid_argument);
  Matrix bad = Matrix::Zero(2, 2);
  bad(1, 1) = INFINITY;
  CHECK_THROWS_AS(PromptVector{bad}, std::invalid_argument);
  CHECK(PromptVector::random(3, 4, 0.02, 7) == PromptVector::random(3, 4, 0.02, 7));
  CHECK_FALSE(PromptVector::random(3, 4, 0.02, 7) == PromptVector::random(3, 4, 0.02, 8));

  PromptVector p = PromptVector::zeros(2, 3);
  p.apply_step(Matrix::Ones(2, 3), 0.5);
  CHECK(p.tokens() == Matrix::Constant(2, 3, -0.5));
}

TEST_CASE("temperature must be positive") {
  CHECK(Temperature().value() == 0.05);
  CHECK_THROWS_AS(Temperature(0.0), std::invalid_argument);
  CHECK_THROWS_AS(Temperature(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(Temperature(NAN), std::invalid_argument);
}

TEST_CASE("class space partition") {
  ClassSpace s(6, {4, 1, 2});
  CHECK(s.base() == std::vector<ClassId>{1, 2, 4});
  CHECK(s.novel() == std::vector<ClassId>{0, 3, 5});
  CHECK(s.all().size() == 6);
  CHECK(s.is_base(4));
  CHECK(s.tag(0) == SpaceTag::kNew);
  CHECK(std::string(to_string(SpaceTag::kNew)) == "new");

  CHECK_THROWS_AS(ClassSpace(4, {}), std::invalid_argument);
  CHECK_THROWS_AS(ClassSpace(4, {0, 1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(ClassSpace(4, {0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(ClassSpace(4, {7}), std::invalid_argument);
}

TEST_CASE("softmax examples") {
  FrozenEncoder enc(Matrix::Identity(2, 2), Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  const PromptVector p = PromptVector::zeros(1, 2);
  Vector z(2);
  z << 1.0, 0.0;

  SUBCASE("singleton support") {
    std::vector<ClassId> one{1};
    auto d = classify(enc, p, one, Temperature(0.05), z);
    CHECK(d.probs.size() == 1);
    CHECK(d.probs[0] == 1.0);
  }
  SUBCASE("similarities (1, 0) at temperature 1") {
    // Class 0 embeds to e0, class 1 to e1.
    std::vector<ClassId> both{0, 1};
    auto d = classify(enc, p, both, Temperature(1.0), z);
    CHECK(d.probs[0] == doctest::Approx(0.7310585786300049).epsilon(1e-14));
    CHECK(d.probs[1] == doctest::Approx(0.2689414213699951).epsilon(1e-14));
  }
  SUBCASE("equal similarity gives one half each") {
    Vector diag(2);
    diag << 1.0, 1.0;
    std::vector<ClassId> both{0, 1};
    auto d = classify(enc, p, both, Temperature(0.05), diag.normalized());
    CHECK(d.probs[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(d.probs[1] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("empty support") {
    std::vector<ClassId> none;
    CHECK_THROWS_WITH_AS(classify(enc, p, none, Temperature(), z), "empty support",
                         std::invalid_argument);
  }
}

TEST_CASE("stable softmax survives large logits and rejects non-finite ones") {
  Vector big(3);
  big << 1e6, 1e6 - 1.0, -1e6;
  const Vector p = stable_softmax(big);
  CHECK(p.allFinite());
  CHECK(std::abs(p.sum() - 1.0) < 1e-12);
  Vector inf(2);
  inf << INFINITY, 0.0;
  CHECK_THROWS_WITH_AS(stable_softmax(inf), "numerical overflow", NumericalError);
  CHECK_THROWS_AS(stable_softmax(Vector()), std::invalid_argument);
}

TEST_CASE("classify is permutation equivariant and normalized") {
  auto enc = small_encoder(7);
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    PromptVector p = PromptVector::random(2, 5, 0.3, 500 + trial);
    std::vector<ClassId> support = iota_classes(7);
    std::shuffle(support.begin(), support.end(), rng);
    support.resize(2 + trial % 6);
    const Vector z = random_unit(4, rng);
    const auto d = classify(*enc, p, support, Temperature(0.05), z);
    CHECK(std::abs(d.probs.sum() - 1.0) < 1e-9);
    CHECK(d.probs.minCoeff() >= 0.0);

    std::vector<ClassId> permuted = support;
    std::shuffle(permuted.begin(), permuted.end(), rng);
    const auto e = classify(*enc, p, permuted, Temperature(0.05), z);
    for (ClassId c : support) CHECK(std::abs(d.prob(c) - e.prob(c)) < 1e-15);
  }
}

TEST_CASE("distribution helpers") {
  ProbabilityDistribution d{{3, 1, 7}, Vector::Zero(3)};
  d.probs << 0.2, 0.5, 0.3;
  CHECK(d.argmax() == 1);
  CHECK(d.prob(7) == 0.3);
  CHECK(d.prob(4) == 0.0);
  std::vector<ClassId> sub{7, 3};
  CHECK(d.mass(sub) == doctest::Approx(0.5));
  const auto r = d.restrict_to(sub);
  CHECK(r.support == std::vector<ClassId>{7, 3});
  CHECK(r.probs[0] == doctest::Approx(0.6));
  std::vector<ClassId> missing{9};
  CHECK_THROWS_AS(d.restrict_to(missing), std::invalid_argument);

  ProbabilityDistribution tie{{0, 1}, Vector::Constant(2, 0.5)};
  CHECK(tie.argmax() == 0);
}

TEST_CASE("text head matches classify and select keeps order") {
  auto enc = small_encoder();
  PromptVector p = PromptVector::random(2, 5, 0.2, 3);
  std::mt19937_64 rng(2);
  const Vector z = random_unit(4, rng);
  const auto head = TextHead::from_prompt(*enc, p, iota_classes(6), Temperature());
  std::vector<ClassId> all = iota_classes(6);
  CHECK((head.predict(z).probs - classify(*enc, p, all, Temperature(), z).probs).norm() < 1e-15);

  std::vector<ClassId> sub{4, 0};
  const auto sel = head.select(sub);
  CHECK(sel.support() == sub);
  CHECK((sel.predict(z).probs - classify(*enc, p, sub, Temperature(), z).probs).norm() < 1e-15);
  std::vector<ClassId> bad{9};
  CHECK_THROWS_AS(head.select(bad), std::out_of_range);
  CHECK_THROWS_AS(TextHead({0, 0}, Matrix::Ones(4, 2), Temperature()), std::invalid_argument);
  CHECK_THROWS_AS(head.logits(Vector::Ones(3)), std::invalid_argument);
}
