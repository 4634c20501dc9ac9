#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "saf/tensor.hpp"

namespace saf {

/// Label value for samples that belong to no category.
inline constexpr int kNonsense = -1;

/// Floor applied inside logarithms and divisions of the hybrid loss.
inline constexpr double kLossFloor = 1e-12;

struct HybridLossParams {
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  double alpha3 = 0.0;
  double p = 2.0;

  /// Throws ConfigError unless p > 1, every alpha >= 0 and at least one alpha > 0.
  void validate() const;

  friend bool operator==(const HybridLossParams&, const HybridLossParams&) = default;
};

/// Clamp evaluates degenerate score vectors through the floor; Strict throws NumericError.
enum class FloorPolicy { Clamp, Strict };

struct LossWithGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// -a1 ln(y_l / sum y) + a2 |1 - y_l|^p + a3 sum_{i != l} |y_i|^p
double hybrid_loss(std::span<const double> scores, std::size_t label, const HybridLossParams& params,
                   FloorPolicy policy = FloorPolicy::Clamp);

/// d loss / d y_i for every i.
std::vector<double> hybrid_loss_grad(std::span<const double> scores, std::size_t label,
                                     const HybridLossParams& params,
                                     FloorPolicy policy = FloorPolicy::Clamp);

/// Loss for a nonsense-labelled sample on a robust model: the target is the
/// all-zero score vector, penalised as a2 * sum_i |y_i|^p.
LossWithGrad hybrid_nonsense_loss(std::span<const double> scores, const HybridLossParams& params);

std::vector<double> softmax(std::span<const double> logits);

/// Cross-entropy of softmax(logits) against `label`, max-subtracted.
LossWithGrad softmax_log_loss(std::span<const double> logits, std::size_t label);

/// Cross-entropy against the uniform distribution; drives every probability to 1/L.
LossWithGrad softmax_nonsense_loss(std::span<const double> logits);

enum class LossKind { Softmax, Hybrid };

std::string to_string(LossKind kind);

template <class T>
struct BatchLoss {
  double loss = 0.0;  // mean over samples
  Tensor<T> grad;     // d mean-loss / d scores, shape (N, L)
};

/// Labels may be kNonsense. Scores are logits for Softmax, SAF outputs for Hybrid.
template <class T>
BatchLoss<T> batch_loss(LossKind kind, const Tensor<T>& scores, std::span<const int> labels,
                        const HybridLossParams& params);

}  // namespace saf
