#include "saf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace saf {
namespace {

double abs_pow(double v, double p) { return std::pow(std::abs(v), p); }

// d/dv |v|^p
double abs_pow_deriv(double v, double p) {
  if (v == 0.0) return 0.0;
  return p * std::pow(std::abs(v), p - 1.0) * (v > 0.0 ? 1.0 : -1.0);
}

void check_label(std::span<const double> scores, std::size_t label, const char* op) {
  if (scores.empty()) throw DimensionError(std::string(op) + ": empty score vector");
  if (label >= scores.size())
    throw DimensionError(std::string(op) + ": label " + std::to_string(label) +
                         " out of range for " + std::to_string(scores.size()) + " categories");
}

struct Normalizer {
  double label_score;
  double total;
};

Normalizer floored(std::span<const double> scores, std::size_t label, FloorPolicy policy,
                   const char* op) {
  const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
  const double y = scores[label];
  if (policy == FloorPolicy::Strict && (total <= kLossFloor || y <= 0.0))
    throw NumericError(std::string(op) + ": degenerate scores (label score " + std::to_string(y) +
                       ", total " + std::to_string(total) + ")");
  return {std::max(y, kLossFloor), std::max(total, kLossFloor)};
}

}  // namespace

void HybridLossParams::validate() const {
  if (!(p > 1.0)) throw ConfigError("hybrid loss: order p must exceed 1, got " + std::to_string(p));
  if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0)
    throw ConfigError("hybrid loss: weights must be non-negative");
  if (alpha1 == 0 && alpha2 == 0 && alpha3 == 0)
    throw ConfigError("hybrid loss: at least one weight must be positive");
}

double hybrid_loss(std::span<const double> scores, std::size_t label, const HybridLossParams& params,
                   FloorPolicy policy) {
  check_label(scores, label, "hybrid_loss");
  double loss = 0.0;
  if (params.alpha1 != 0.0) {
    const Normalizer n = floored(scores, label, policy, "hybrid_loss");
    loss -= params.alpha1 * std::log(n.label_score / n.total);
  }
  loss += params.alpha2 * abs_pow(1.0 - scores[label], params.p);
  if (params.alpha3 != 0.0)
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (i != label) loss += params.alpha3 * abs_pow(scores[i], params.p);
  return loss;
}

std::vector<double> hybrid_loss_grad(std::span<const double> scores, std::size_t label,
                                     const HybridLossParams& params, FloorPolicy policy) {
  check_label(scores, label, "hybrid_loss_grad");
  std::vector<double> grad(scores.size(), 0.0);
  if (params.alpha1 != 0.0) {
    const Normalizer n = floored(scores, label, policy, "hybrid_loss_grad");
    for (double& g : grad) g = params.alpha1 / n.total;
    grad[label] -= params.alpha1 / n.label_score;
  }
  grad[label] -= params.alpha2 * abs_pow_deriv(1.0 - scores[label], params.p);
  if (params.alpha3 != 0.0)
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (i != label) grad[i] += params.alpha3 * abs_pow_deriv(scores[i], params.p);
  return grad;
}

LossWithGrad hybrid_nonsense_loss(std::span<const double> scores, const HybridLossParams& params) {
  LossWithGrad out;
  out.grad.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.loss += params.alpha2 * abs_pow(scores[i], params.p);
    out.grad[i] = params.alpha2 * abs_pow_deriv(scores[i], params.p);
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

LossWithGrad softmax_log_loss(std::span<const double> logits, std::size_t label) {
  check_label(logits, label, "softmax_log_loss");
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - top);
  LossWithGrad out;
  out.loss = std::log(z) - (logits[label] - top);
  out.grad = softmax(logits);
  out.grad[label] -= 1.0;
  return out;
}

LossWithGrad softmax_nonsense_loss(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax_nonsense_loss: empty score vector");
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - top);
  const double n = static_cast<double>(logits.size());
  LossWithGrad out;
  out.loss = std::log(z);
  for (double v : logits) out.loss -= (v - top) / n;
  out.grad = softmax(logits);
  for (double& g : out.grad) g -= 1.0 / n;
  return out;
}

std::string to_string(LossKind kind) { return kind == LossKind::Softmax ? "softmax" : "hybrid"; }

template <class T>
BatchLoss<T> batch_loss(LossKind kind, const Tensor<T>& scores, std::span<const int> labels,
                        const HybridLossParams& params) {
  if (scores.rank() != 2)
    throw DimensionError("batch_loss: scores must be rank 2 (N, L), got " + shape_string(scores.shape()));
  const std::size_t n = scores.dim(0), l = scores.dim(1);
  if (labels.size() != n)
    throw DimensionError("batch_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " samples on axis 0");
  BatchLoss<T> out;
  out.grad = Tensor<T>({n, l});
  std::vector<double> row(l);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < l; ++j) row[j] = scores[i * l + j];
    LossWithGrad lg;
    const int label = labels[i];
    if (label == kNonsense) {
      lg = kind == LossKind::Softmax ? softmax_nonsense_loss(row) : hybrid_nonsense_loss(row, params);
    } else if (label < 0 || static_cast<std::size_t>(label) >= l) {
      throw DataError("batch_loss: label " + std::to_string(label) + " out of range");
    } else if (kind == LossKind::Softmax) {
      lg = softmax_log_loss(row, static_cast<std::size_t>(label));
    } else {
      const auto lab = static_cast<std::size_t>(label);
      lg.loss = hybrid_loss(row, lab, params);
      lg.grad = hybrid_loss_grad(row, lab, params);
    }
    out.loss += lg.loss * inv_n;
    for (std::size_t j = 0; j < l; ++j) out.grad[i * l + j] = static_cast<T>(lg.grad[j] * inv_n);
  }
  return out;
}

template BatchLoss<float> batch_loss(LossKind, const Tensor<float>&, std::span<const int>,
                                     const HybridLossParams&);
template BatchLoss<double> batch_loss(LossKind, const Tensor<double>&, std::span<const int>,
                                      const HybridLossParams&);

}  // namespace saf
