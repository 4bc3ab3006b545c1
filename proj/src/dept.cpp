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

#include "decoop/dept.hpp"

#include "summation.hpp"
#include "text_format.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

namespace decoop {
namespace {

double neg_log(double p, bool &finite) {
  if (!(p > 0.0)) {
    finite = false;
    return std::numeric_limits<double>::infinity();
  }
  return -std::log(p);
}

}  // namespace

DeptModel::DeptModel(ZeroShotModel zs, TrainedClassifier pt, ClassSpace space)
    : zs_(std::move(zs)),
      pt_(std::move(pt)),
      space_(std::move(space)),
      zs_head_(zs_.head(space_.all())),
      pt_head_(TextHead::from_prompt(zs_.encoder(), pt_.prompt, space_.all(), zs_.temperature())) {
  std::vector<ClassId> support = pt_.support;
  std::sort(support.begin(), support.end());
  if (support != space_.base())
    throw std::invalid_argument("tuned classifier support must equal the base classes");
}

DeptPrediction dept_predict(const DeptModel &model, const Vector &z) {
  const auto zs = model.zs_full(z);
  if (msp_prefers_base(msp_space_scores(zs, model.class_space())))
    return {model.pt_full(z).argmax(), DeptBranch::kPromptTuned};
  return {zs.argmax(), DeptBranch::kZeroShot};
}

ProbabilityDistribution soft_dept_distribution(const DeptModel &model, const Vector &z) {
  const ClassSpace &space = model.class_space();
  const auto zs = model.zs_full(z);
  const auto mass = mass_space_probability(zs, space);
  const auto pt_base = model.pt_full(z).restrict_to(space.base());
  const auto zs_new = zs.restrict_to(space.novel());

  ProbabilityDistribution out{space.all(), Vector(space.num_classes())};
  for (std::size_t i = 0; i < pt_base.support.size(); ++i)
    out.probs[pt_base.support[i]] = pt_base.probs[static_cast<Eigen::Index>(i)] * mass.base;
  for (std::size_t i = 0; i < zs_new.support.size(); ++i)
    out.probs[zs_new.support[i]] = zs_new.probs[static_cast<Eigen::Index>(i)] * mass.novel;
  return out;
}

CrossEntropyTerms cross_entropy_terms(const DeptModel &model, const Vector &z, ClassId label) {
  const ClassSpace &space = model.class_space();
  if (label < 0 || label >= space.num_classes()) throw std::out_of_range("unknown class");
  const auto &cell = space.members(space.tag(label));

  const auto zs = model.zs_full(z);
  const auto pt = model.pt_full(z);
  const auto mass = mass_space_probability(zs, space);
  const double p_cell = space.is_base(label) ? mass.base : mass.novel;

  CrossEntropyTerms t;
  t.ood_zs = neg_log(p_cell, t.finite);
  t.cls_zs = neg_log(zs.prob(label) / zs.mass(cell), t.finite);
  t.cls_pt = neg_log(pt.prob(label) / pt.mass(cell), t.finite);
  t.zs = neg_log(zs.prob(label), t.finite);
  t.dept = neg_log(soft_dept_distribution(model, z).prob(label), t.finite);
  return t;
}

TheoremReport check_theorem(const DeptModel &model, std::span<const LabeledExample> test,
                            std::optional<double> alpha) {
  const FrozenEncoder &enc = model.zs().encoder();
  CompensatedSum cls_zs_all, ood_all, zs_all, dept_all, cls_zs_base, cls_pt_base;
  TheoremReport r;
  for (const auto &ex : test) {
    const auto t = cross_entropy_terms(model, image_embedding(enc, ex.feature), ex.label);
    ++r.n_examples;
    if (!t.finite) ++r.n_infinite;
    cls_zs_all.add(t.cls_zs);
    ood_all.add(t.ood_zs);
    zs_all.add(t.zs);
    dept_all.add(t.dept);
    if (ex.space == SpaceTag::kBase) {
      ++r.n_base;
      cls_zs_base.add(t.cls_zs);
      cls_pt_base.add(t.cls_pt);
    }
  }
  if (r.n_base == 0 || r.n_base == r.n_examples)
    throw std::invalid_argument("theorem check needs base and new test examples");

  const double n = r.n_examples;
  const double nb = r.n_base;
  r.alpha = alpha.value_or(nb / n);
  if (!(r.alpha > 0.0 && r.alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  r.delta = cls_zs_all.value() / n;
  r.Delta = cls_zs_base.value() / nb - cls_pt_base.value() / nb;
  r.epsilon = ood_all.value() / n;
  r.lhs_zs = zs_all.value() / n;
  r.lhs_dept = dept_all.value() / n;
  r.rhs_zs = r.epsilon + r.delta;
  r.rhs_dept = r.epsilon + r.delta - r.alpha * r.Delta;
  r.valid = r.n_infinite == 0;
  r.bound_zs_holds = r.valid && r.lhs_zs <= r.rhs_zs + kBoundTolerance;
  r.bound_dept_holds = r.valid && r.lhs_dept <= r.rhs_dept + kBoundTolerance;
  return r;
}

void write_theorem_report(std::ostream &out, const TheoremReport &r) {
  using text::format_double;
  out << "delta=" << format_double(r.delta) << '\n'
      << "Delta=" << format_double(r.Delta) << '\n'
      << "epsilon=" << format_double(r.epsilon) << '\n'
      << "alpha=" << format_double(r.alpha) << '\n'
      << "lhs_zs=" << format_double(r.lhs_zs) << '\n'
      << "lhs_dept=" << format_double(r.lhs_dept) << '\n'
      << "rhs_zs=" << format_double(r.rhs_zs) << '\n'
      << "rhs_dept=" << format_double(r.rhs_dept) << '\n'
      << "bound_zs_holds=" << (r.bound_zs_holds ? "true" : "false") << '\n'
      << "bound_dept_holds=" << (r.bound_dept_holds ? "true" : "false") << '\n'
      << "valid=" << (r.valid ? "true" : "false") << '\n'
      << "n_examples=" << r.n_examples << '\n'
      << "n_base=" << r.n_base << '\n'
      << "n_infinite=" << r.n_infinite << '\n';
}

TheoremReport read_theorem_report(std::istream &in) {
  TheoremReport r;
  std::string line;
  auto flag = [](std::string_view v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw FormatError("bad boolean '" + std::string(v) + "'");
  };
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string_view v = text::trim(std::string_view(line).substr(eq + 1));
    if (key == "delta") r.delta = text::parse_double(v);
    else if (key == "Delta") r.Delta = text::parse_double(v);
    else if (key == "epsilon") r.epsilon = text::parse_double(v);
    else if (key == "alpha") r.alpha = text::parse_double(v);
    else if (key == "lhs_zs") r.lhs_zs = text::parse_double(v);
    else if (key == "lhs_dept") r.lhs_dept = text::parse_double(v);
    else if (key == "rhs_zs") r.rhs_zs = text::parse_double(v);
    else if (key == "rhs_dept") r.rhs_dept = text::parse_double(v);
    else if (key == "bound_zs_holds") r.bound_zs_holds = flag(v);
    else if (key == "bound_dept_holds") r.bound_dept_holds = flag(v);
    else if (key == "valid") r.valid = flag(v);
    else if (key == "n_examples") r.n_examples = text::parse_int<int>(v);
    else if (key == "n_base") r.n_base = text::parse_int<int>(v);
    else if (key == "n_infinite") r.n_infinite = text::parse_int<int>(v);
    else throw FormatError("unknown theorem report key '" + key + "'");
  }
  return r;
}

}  // namespace decoop
