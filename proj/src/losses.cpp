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

#include <algorithm>
#include <cmath>

namespace decoop {
namespace {

// Text tower activations for every class of the support.
struct TextForward {
  Matrix activations;  // tanh outputs, d x S
  Vector norms;        // ||activation|| per class
  Matrix weights;      // unit embeddings, d x S
};

TextForward text_forward(const FrozenEncoder &enc, const PromptVector &prompt,
                         std::span<const ClassId> support) {
  if (prompt.token_dim() != enc.token_dim())
    throw std::invalid_argument("prompt token width does not match encoder");
  const auto classes = static_cast<Eigen::Index>(support.size());
  const Vector prompt_sum = prompt.tokens().colwise().sum().transpose();
  Matrix pooled(enc.token_dim(), classes);
  for (Eigen::Index i = 0; i < classes; ++i)
    pooled.col(i) = prompt_sum + enc.class_token(support[static_cast<std::size_t>(i)]);
  pooled /= static_cast<double>(prompt.length() + 1);

  TextForward fwd;
  fwd.activations = (enc.text_map() * pooled).array().tanh().matrix();
  fwd.norms = fwd.activations.colwise().norm().transpose();
  if ((fwd.norms.array() <= 0.0).any()) throw std::domain_error("zero-norm embedding");
  fwd.weights = fwd.activations * fwd.norms.cwiseInverse().asDiagonal();
  return fwd;
}

Eigen::Index support_index(std::span<const ClassId> support, ClassId label) {
  auto it = std::find(support.begin(), support.end(), label);
  if (it == support.end()) throw std::invalid_argument("label not in support");
  return it - support.begin();
}

// Per-example loss terms. Fills the loss and dL/dlogits (S x N).
struct LogitGrad {
  double loss = 0.0;
  Matrix dlogits;
};

struct BatchState {
  std::span<const ClassId> support;
  std::span<const LossExample> batch;
  Matrix probs;  // S x N
};

double column_entropy(const Matrix &probs, Eigen::Index n) { return entropy(probs.col(n)); }

// d H(softmax(l)) / d l_j = -p_j (log p_j + H)
void add_entropy_grad(const Matrix &probs, Eigen::Index n, double scale, Matrix &out) {
  const double h = column_entropy(probs, n);
  for (Eigen::Index j = 0; j < probs.rows(); ++j) {
    const double p = probs(j, n);
    if (p > 0.0) out(j, n) += -scale * p * (std::log(p) + h);
  }
}

// d CE / d l = p - onehot
void add_ce_grad(const BatchState &s, Eigen::Index n, double scale, Matrix &out) {
  const Eigen::Index y = support_index(s.support, s.batch[static_cast<std::size_t>(n)].label);
  out.col(n) += scale * s.probs.col(n);
  out(y, n) -= scale;
}

double ce_value(const BatchState &s, Eigen::Index n) {
  const Eigen::Index y = support_index(s.support, s.batch[static_cast<std::size_t>(n)].label);
  return -std::log(s.probs(y, n));
}

const Vector &checked_reference(const BatchState &s, Eigen::Index n) {
  const Vector &ref = s.batch[static_cast<std::size_t>(n)].reference;
  if (ref.size() != static_cast<Eigen::Index>(s.support.size()))
    throw std::invalid_argument("KL reference does not match support");
  return ref;
}

// d KL(p || q) / d l_j = p_j (log p_j - log q_j - KL)
void add_kl_grad(const BatchState &s, Eigen::Index n, double scale, Matrix &out) {
  const Vector &q = checked_reference(s, n);
  const double kl = kl_divergence(s.probs.col(n), q);
  for (Eigen::Index j = 0; j < s.probs.rows(); ++j) {
    const double p = s.probs(j, n);
    if (p > 0.0) out(j, n) += scale * p * (std::log(p) - std::log(q[j]) - kl);
  }
}

struct LogitGradVisitor {
  const BatchState &s;
  bool want_grad;

  LogitGrad operator()(const CrossEntropyLoss &) const {
    LogitGrad r{0.0, Matrix::Zero(s.probs.rows(), s.probs.cols())};
    const double scale = 1.0 / static_cast<double>(s.probs.cols());
    for (Eigen::Index n = 0; n < s.probs.cols(); ++n) {
      r.loss += scale * ce_value(s, n);
      if (want_grad) add_ce_grad(s, n, scale, r.dlogits);
    }
    return r;
  }

  LogitGrad operator()(const EntropyLoss &) const {
    LogitGrad r{0.0, Matrix::Zero(s.probs.rows(), s.probs.cols())};
    const double scale = 1.0 / static_cast<double>(s.probs.cols());
    for (Eigen::Index n = 0; n < s.probs.cols(); ++n) {
      r.loss += scale * column_entropy(s.probs, n);
      if (want_grad) add_entropy_grad(s.probs, n, scale, r.dlogits);
    }
    return r;
  }

  LogitGrad operator()(const EntropyMarginLoss &spec) const {
    LogitGrad r{0.0, Matrix::Zero(s.probs.rows(), s.probs.cols())};
    std::vector<Eigen::Index> base_idx, new_idx;
    for (Eigen::Index n = 0; n < s.probs.cols(); ++n)
      (s.batch[static_cast<std::size_t>(n)].portion == SpaceTag::kBase ? base_idx : new_idx)
          .push_back(n);
    if (base_idx.empty() || new_idx.empty())
      throw std::invalid_argument("entropy-margin batch needs both portions");

    const double base_scale = 1.0 / static_cast<double>(base_idx.size());
    const double new_scale = 1.0 / static_cast<double>(new_idx.size());
    double ce = 0.0, base_h = 0.0, new_h = 0.0;
    for (auto n : base_idx) {
      ce += base_scale * ce_value(s, n);
      base_h += base_scale * column_entropy(s.probs, n);
    }
    for (auto n : new_idx) new_h += new_scale * column_entropy(s.probs, n);

    const double hinge = entropy_margin_hinge(spec.margin, base_h, new_h);
    r.loss = ce + hinge;
    if (want_grad) {
      for (auto n : base_idx) add_ce_grad(s, n, base_scale, r.dlogits);
      // Subgradient 0 at the kink.
      if (hinge > 0.0) {
        for (auto n : base_idx) add_entropy_grad(s.probs, n, base_scale, r.dlogits);
        for (auto n : new_idx) add_entropy_grad(s.probs, n, -new_scale, r.dlogits);
      }
    }
    return r;
  }

  LogitGrad operator()(const CeKlLoss &) const {
    LogitGrad r{0.0, Matrix::Zero(s.probs.rows(), s.probs.cols())};
    for (Eigen::Index n = 0; n < s.probs.cols(); ++n) {
      if (s.batch[static_cast<std::size_t>(n)].portion == SpaceTag::kBase) {
        r.loss += ce_value(s, n);
        if (want_grad) add_ce_grad(s, n, 1.0, r.dlogits);
      } else {
        r.loss += kl_divergence(s.probs.col(n), checked_reference(s, n));
        if (want_grad) add_kl_grad(s, n, 1.0, r.dlogits);
      }
    }
    return r;
  }
};

struct Evaluation {
  TextForward fwd;
  Matrix embeddings;  // d x N
  LogitGrad terms;
};

Evaluation evaluate(const FrozenEncoder &enc, const PromptVector &prompt,
                    std::span<const ClassId> support, Temperature temp,
                    std::span<const LossExample> batch, const LossSpec &spec, bool want_grad) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  if (support.empty()) throw std::invalid_argument("empty support");

  Evaluation ev;
  ev.fwd = text_forward(enc, prompt, support);
  const auto n = static_cast<Eigen::Index>(batch.size());
  ev.embeddings.resize(enc.embed_dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector &z = batch[static_cast<std::size_t>(i)].z;
    if (z.size() != enc.embed_dim()) throw std::invalid_argument("embedding has wrong dimension");
    ev.embeddings.col(i) = z;
  }

  BatchState state{support, batch, Matrix()};
  const Matrix logits = ev.fwd.weights.transpose() * ev.embeddings / temp.value();
  state.probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) state.probs.col(i) = stable_softmax(logits.col(i));

  ev.terms = std::visit(LogitGradVisitor{state, want_grad}, spec);
  if (!std::isfinite(ev.terms.loss)) throw NumericalError("numerical overflow");
  return ev;
}

}  // namespace

double entropy(const Vector &probs) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  return h;
}

double kl_divergence(const Vector &p, const Vector &q) {
  if (p.size() != q.size()) throw std::invalid_argument("KL operands differ in size");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  return kl;
}

double loss_value(const FrozenEncoder &enc, const PromptVector &prompt,
                  std::span<const ClassId> support, Temperature temp,
                  std::span<const LossExample> batch, const LossSpec &spec) {
  return evaluate(enc, prompt, support, temp, batch, spec, false).terms.loss;
}

LossAndGradient loss_and_gradient(const FrozenEncoder &enc, const PromptVector &prompt,
                                  std::span<const ClassId> support, Temperature temp,
                                  std::span<const LossExample> batch, const LossSpec &spec) {
  const Evaluation ev = evaluate(enc, prompt, support, temp, batch, spec, true);
  const TextForward &fwd = ev.fwd;

  // dL/dw_c = sum_n dL/dl_{c,n} z_n / tau
  const Matrix d_weights = ev.embeddings * ev.terms.dlogits.transpose() / temp.value();
  // Through the L2 normalization: (I - w w^T) g / ||a||
  const Vector radial = (fwd.weights.array() * d_weights.array()).colwise().sum().transpose();
  Matrix d_act = d_weights - fwd.weights * radial.asDiagonal();
  d_act = d_act * fwd.norms.cwiseInverse().asDiagonal();
  // Through tanh.
  const Matrix d_pre = (d_act.array() * (1.0 - fwd.activations.array().square())).matrix();
  // Every prompt token enters every class's mean-pool with weight 1 / (m + 1).
  const Vector d_pooled_sum = enc.text_map().transpose() * d_pre.rowwise().sum();
  const Eigen::RowVectorXd token_grad =
      d_pooled_sum.transpose() / static_cast<double>(prompt.length() + 1);

  LossAndGradient out;
  out.loss = ev.terms.loss;
  out.gradient = token_grad.replicate(prompt.length(), 1);
  if (!out.gradient.allFinite()) throw NumericalError("numerical overflow");
  return out;
}

}  // namespace decoop
