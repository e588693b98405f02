// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#include "latecache/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace latecache {

namespace {

constexpr double kTinyProb = 1e-300;

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

void check_label(const Tensor& probs, int label, const char* who) {
  if (label < 0 || label >= probs.numel()) {
    throw std::invalid_argument(std::string(who) + ": label " + std::to_string(label) + " out of range");
  }
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

Tensor softmax(const Tensor& logits) {
  Tensor out({logits.numel()});
  double m = logits[0];
  for (int i = 1; i < logits.numel(); ++i) m = std::max(m, logits[i]);
  double sum = 0.0;
  for (int i = 0; i < logits.numel(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (int i = 0; i < logits.numel(); ++i) out[i] /= sum;
  return out;
}

LossValue cross_entropy_loss(const Tensor& probs, int label) {
  check_label(probs, label, "cross_entropy_loss");
  LossValue lv;
  const double p = std::max(probs[label], kTinyProb);
  lv.loss = -std::log(p);
  lv.grad = Tensor({probs.numel()});
  lv.grad[label] = -1.0 / p;
  return lv;
}

Tensor soften(const Tensor& probs, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("soften: tau must be positive");
  Tensor out({probs.numel()});
  double sum = 0.0;
  for (int i = 0; i < probs.numel(); ++i) {
    if (probs[i] < 0.0) throw std::invalid_argument("soften: probabilities must be nonnegative");
    out[i] = probs[i] > 0.0 ? std::pow(probs[i], 1.0 / tau) : 0.0;
    sum += out[i];
  }
  if (sum <= 0.0) throw std::invalid_argument("soften: distribution sums to zero");
  for (int i = 0; i < probs.numel(); ++i) out[i] /= sum;
  return out;
}

LossValue distill_loss(const Tensor& logits, const Tensor& base_probs, int hard_label, double tau, double beta) {
  if (tau <= 0.0) throw std::invalid_argument("distill_loss: tau must be positive");
  if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("distill_loss: beta must lie in [0, 1]");
  if (logits.numel() != base_probs.numel()) throw std::invalid_argument("distill_loss: dimension mismatch");
  check_label(logits, hard_label, "distill_loss");

  const Tensor q = softmax(logits);

  Tensor scaled({logits.numel()});
  for (int i = 0; i < logits.numel(); ++i) scaled[i] = logits[i] / tau;
  const Tensor q_tau = softmax(scaled);
  const Tensor p_tau = soften(base_probs, tau);

  const double ce = -std::log(std::max(q[hard_label], kTinyProb));
  double kl = 0.0;
  for (int i = 0; i < logits.numel(); ++i) {
    if (p_tau[i] > 0.0) kl += p_tau[i] * (std::log(p_tau[i]) - std::log(std::max(q_tau[i], kTinyProb)));
  }
  kl = std::max(kl, 0.0);  // Gibbs: mathematically >= 0, guard the roundoff

  LossValue lv;
  lv.loss = beta * ce + (1.0 - beta) * tau * tau * kl;
  lv.grad = Tensor({logits.numel()});
  for (int i = 0; i < logits.numel(); ++i) {
    const double hard = beta * (q[i] - (i == hard_label ? 1.0 : 0.0));
    const double soft = (1.0 - beta) * tau * (q_tau[i] - p_tau[i]);
    lv.grad[i] = hard + soft;
  }
  return lv;
}

ScalarLoss weighted_selector_loss(double logit, int target, double w_fp, double w_fn) {
  if (target != 0 && target != 1) throw std::invalid_argument("weighted_selector_loss: target must be 0 or 1");
  if (w_fp <= 0.0 || w_fn <= 0.0) throw std::invalid_argument("weighted_selector_loss: weights must be positive");
  ScalarLoss sl;
  const double s = sigmoid(logit);
  if (target == 1) {
    sl.loss = w_fn * softplus(-logit);  // -w_fn * log(sigmoid)
    sl.grad = -w_fn * (1.0 - s);
  } else {
    sl.loss = w_fp * softplus(logit);  // -w_fp * log(1 - sigmoid)
    sl.grad = w_fp * s;
  }
  return sl;
}

}  // namespace latecache
