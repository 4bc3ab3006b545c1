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

#include "decoop/losses.hpp"

#include "generators.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace decoop;
using namespace decoop::testing;

TEST_CASE("analytic prompt gradients match central differences") {
  // Entries below the floor are compared on an absolute scale: the central
  // difference itself carries about 1e-11 of rounding noise at step 1e-5.
  constexpr double kFloor = 1e-6;
  const std::string names[] = {"cross-entropy", "entropy", "entropy-margin", "ce+kl"};
  for (int which = 0; which < 4; ++which) {
    int checked = 0;
    double worst = 0.0;
    for (std::uint64_t seed = 1; checked < 25; ++seed) {
      const GradCase c = make_grad_case(which, seed * 7919 + static_cast<std::uint64_t>(which));
      if (hinge_gap(c) < 1e-3) continue;
      const auto lg = loss_and_gradient(*c.enc, c.prompt, c.support, c.temp, c.batch, c.spec);
      const Matrix fd = oracle::fd_gradient(*c.enc, c.prompt, c.support, c.temp, c.batch, c.spec);
      const double err = oracle::max_relative_error(lg.gradient, fd, kFloor);
      worst = std::max(worst, err);
      CHECK_MESSAGE(err < 1e-5, names[which] << " seed " << seed);
      ++checked;
    }
    MESSAGE(names[which] << ": worst relative error " << worst);
  }
}

TEST_CASE("gradient rows are identical because only the prompt sum enters") {
  const GradCase c = make_grad_case(0, 42);
  const auto lg = loss_and_gradient(*c.enc, c.prompt, c.support, c.temp, c.batch, c.spec);
  for (int r = 1; r < lg.gradient.rows(); ++r) CHECK(lg.gradient.row(r) == lg.gradient.row(0));
}

TEST_CASE("singleton cross-entropy has zero loss and zero gradient") {
  auto enc = small_encoder();
  std::mt19937_64 rng(5);
  PromptVector p = PromptVector::random(3, 5, 0.1, 9);
  std::vector<ClassId> one{2};
  std::vector<LossExample> batch{{random_unit(4, rng), 2, SpaceTag::kBase, {}},
                                 {random_unit(4, rng), 2, SpaceTag::kBase, {}}};
  const auto lg = loss_and_gradient(*enc, p, one, Temperature(), batch, CrossEntropyLoss{});
  CHECK(lg.loss == 0.0);
  CHECK(lg.gradient.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("duplicating a mean-reduced batch changes nothing") {
  for (int which : {0, 1, 2}) {
    const GradCase c = make_grad_case(which, 77);
    std::vector<LossExample> doubled = c.batch;
    doubled.insert(doubled.end(), c.batch.begin(), c.batch.end());
    const auto a = loss_and_gradient(*c.enc, c.prompt, c.support, c.temp, c.batch, c.spec);
    const auto b = loss_and_gradient(*c.enc, c.prompt, c.support, c.temp, doubled, c.spec);
    CHECK(b.loss == doctest::Approx(a.loss).epsilon(1e-13));
    CHECK((b.gradient - a.gradient).cwiseAbs().maxCoeff() <=
          1e-12 * (1.0 + a.gradient.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("summed ce+kl doubles with a duplicated batch") {
  const GradCase c = make_grad_case(3, 78);
  std::vector<LossExample> doubled = c.batch;
  doubled.insert(doubled.end(), c.batch.begin(), c.batch.end());
  const double a = loss_value(*c.enc, c.prompt, c.support, c.temp, c.batch, c.spec);
  const double b = loss_value(*c.enc, c.prompt, c.support, c.temp, doubled, c.spec);
  CHECK(b == doctest::Approx(2.0 * a).epsilon(1e-13));
}

TEST_CASE("entropy and kl helpers") {
  CHECK(entropy(Vector::Constant(4, 0.25)) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  Vector one_hot = Vector::Zero(3);
  one_hot[1] = 1.0;
  CHECK(entropy(one_hot) == 0.0);
  const Vector p = Vector::Constant(3, 1.0 / 3.0);
  CHECK(kl_divergence(p, p) == 0.0);
  Vector q(3);
  q << 0.5, 0.25, 0.25;
  CHECK(kl_divergence(one_hot, q) == doctest::Approx(std::log(4.0)));
  CHECK_THROWS_AS(kl_divergence(p, Vector::Ones(2)), std::invalid_argument);
}

TEST_CASE("entropy-margin hinge examples") {
  CHECK(entropy_margin_hinge(0.4, 0.2, 0.9) == 0.0);
  CHECK(entropy_margin_hinge(0.4, 0.5, 0.6) == doctest::Approx(0.3));
  // Exactly zero on the boundary and beyond it.
  CHECK(entropy_margin_hinge(0.4, 0.5, 0.9) == 0.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    const double g = u(rng), hb = u(rng), hn = u(rng);
    const double h = entropy_margin_hinge(g, hb, hn);
    CHECK(h >= 0.0);
    if (hn >= hb + g) CHECK(h == 0.0);
  }
}

TEST_CASE("loss errors") {
  auto enc = small_encoder();
  std::mt19937_64 rng(8);
  PromptVector p = PromptVector::random(2, 5, 0.1, 1);
  std::vector<ClassId> support{0, 1, 2};
  std::vector<LossExample> base_only{{random_unit(4, rng), 0, SpaceTag::kBase, {}}};

  CHECK_THROWS_AS(loss_value(*enc, p, support, Temperature(), base_only, EntropyMarginLoss{}),
                  std::invalid_argument);
  std::vector<LossExample> stranger{{random_unit(4, rng), 5, SpaceTag::kBase, {}}};
  CHECK_THROWS_WITH_AS(loss_value(*enc, p, support, Temperature(), stranger, CrossEntropyLoss{}),
                       "label not in support", std::invalid_argument);
  std::vector<LossExample> empty;
  CHECK_THROWS_AS(loss_value(*enc, p, support, Temperature(), empty, CrossEntropyLoss{}),
                  std::invalid_argument);
  std::vector<LossExample> bad_ref{{random_unit(4, rng), 0, SpaceTag::kNew, Vector::Ones(2)}};
  CHECK_THROWS_AS(loss_value(*enc, p, support, Temperature(), bad_ref, CeKlLoss{}),
                  std::invalid_argument);

  // A zero reference probability makes KL infinite.
  Vector ref(3);
  ref << 1.0, 0.0, 0.0;
  std::vector<LossExample> zero_ref{{random_unit(4, rng), 0, SpaceTag::kNew, ref}};
  CHECK_THROWS_WITH_AS(loss_value(*enc, p, support, Temperature(), zero_ref, CeKlLoss{}),
                       "numerical overflow", NumericalError);
}

TEST_CASE("ce+kl with a reference equal to the model output is plain ce") {
  auto enc = small_encoder();
  std::mt19937_64 rng(12);
  PromptVector p = PromptVector::random(2, 5, 0.1, 4);
  std::vector<ClassId> support{0, 1, 2, 3};
  const Vector zn = random_unit(4, rng);
  const Vector model = classify(*enc, p, support, Temperature(), zn).probs;
  std::vector<LossExample> batch{{random_unit(4, rng), 1, SpaceTag::kBase, {}},
                                 {zn, 0, SpaceTag::kNew, model}};
  std::vector<LossExample> base_only{batch[0]};
  CHECK(loss_value(*enc, p, support, Temperature(), batch, CeKlLoss{}) ==
        doctest::Approx(loss_value(*enc, p, support, Temperature(), base_only, CeKlLoss{}))
            .epsilon(1e-12));
}
