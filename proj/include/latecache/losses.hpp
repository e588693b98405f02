// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

#include "latecache/tensor.hpp"

// Loss functions used to train the base classifier and the per-layer cache
// networks. Each returns the scalar loss plus its analytic gradient.

namespace latecache {

struct LossValue {
  double loss = 0.0;
  Tensor grad;
};

struct ScalarLoss {
  double loss = 0.0;
  double grad = 0.0;
};

double sigmoid(double x);

// Softmax of a logit vector (numerically stabilized).
Tensor softmax(const Tensor& logits);

// -log p[label]; gradient w.r.t. the probability vector. Feeding this into
// the softmax layer's backward pass yields the classic (p - onehot) rule.
LossValue cross_entropy_loss(const Tensor& probs, int label);

// Temperature-softened distribution: normalize(p^(1/tau)). tau > 1 flattens,
// tau = 1 is the identity.
Tensor soften(const Tensor& probs, double tau);

// Distillation-style predictor loss over raw logits:
//   beta * CE(softmax(logits), hard_label)
//     + (1 - beta) * tau^2 * KL(soften(base_probs, tau) || softmax(logits / tau))
// Gradient is w.r.t. the logits. Defaults: tau = 2, beta = 0.5.
LossValue distill_loss(const Tensor& logits, const Tensor& base_probs, int hard_label, double tau = 2.0,
                       double beta = 0.5);

// Binary cross-entropy over a single logit with asymmetric costs. target = 1
// means "the predictor was right, the selector should fire"; firing wrongly
// (target = 0) is scaled by w_fp, abstaining wrongly by w_fn. With
// w_fp = w_fn = 1 this is plain BCE.
ScalarLoss weighted_selector_loss(double logit, int target, double w_fp, double w_fn);

}  // namespace latecache
