#pragma once

// Adversarial (fast gradient sign), nonsense and noisy sample generation.
// All images are in pixel units [0, 255]; the network's input scaling is
// applied inside the model.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "saf/losses.hpp"
#include "saf/model.hpp"
#include "saf/tensor.hpp"

namespace saf {

inline constexpr double kPixelMax = 255.0;

enum class PerturbKind { Adversarial, Nonsense, Noisy };

std::string to_string(PerturbKind kind);
PerturbKind perturb_kind_from_string(std::string_view name);

struct AttackConfig {
  PerturbKind kind = PerturbKind::Adversarial;
  double beta = 0.0;
  std::uint64_t seed = 0;
  double pixel_scale = kPixelMax;

  void validate() const;  // ConfigError for beta < 0
};

/// Per-sample loss gradient with respect to the raw input, for one label per
/// sample (kNonsense allowed). Eval-mode forward. Shape matches `images`.
template <class T>
Tensor<T> loss_input_gradient(const Model<T>& model, const Tensor<T>& images, std::span<const int> labels,
                              const HybridLossParams& params);

template <class T>
struct FgsDirection {
  Tensor<T> step;            // -sign(dL(X, l_max)/dX), entries in {-1, 0, 1}
  std::vector<int> targets;  // l_max per sample
};

/// For each sample picks l_max, the incorrect category whose loss gradient has
/// the largest L1 norm (every category for kNonsense samples), and returns the
/// descent direction of that loss. Independent of beta.
template <class T>
FgsDirection<T> fgs_direction(const Model<T>& model, const Tensor<T>& images, std::span<const int> labels,
                              const HybridLossParams& params, std::size_t batch_size = 100);

/// clamp(base + pixel_scale * beta * direction, 0, pixel_scale)
template <class T>
Tensor<T> apply_step(const Tensor<T>& base, const Tensor<T>& direction, double beta,
                     double pixel_scale = kPixelMax);

template <class T>
Tensor<T> fgs_adversarial(const Model<T>& model, const Tensor<T>& images, std::span<const int> labels,
                          const HybridLossParams& params, double beta);

/// Unit Gaussian field shaped like `shape`; row i is drawn from its own stream
/// keyed by (seed, ids[i]), so a sample's noise does not depend on its batch.
Tensor<float> gaussian_field(const Shape& shape, std::uint64_t seed, std::span<const std::int64_t> ids);

/// `count` noise images: N(0, 1) per pixel, then mapped affinely per image so
/// that its minimum becomes 0 and its maximum 255. Image i is keyed by (seed, first_id + i).
Tensor<float> nonsense_base(std::size_t count, const Shape& sample_shape, std::uint64_t seed,
                            std::int64_t first_id = 0);

/// clamp(X + 255 beta g), g from gaussian_field(seed, ids).
Tensor<float> noisy_sample(const Tensor<float>& images, double beta, std::uint64_t seed,
                           std::span<const std::int64_t> ids);

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// PSNR of a sign perturbation with strength beta: -20 log10(beta). +inf at beta = 0.
double psnr(double beta);
/// 10 log10(255^2 / MSE); +inf for identical images.
double psnr_images(std::span<const float> a, std::span<const float> b);

/// A generated sample set at one strength.
struct SampleSet {
  PerturbKind kind = PerturbKind::Adversarial;
  double beta = 0.0;
  std::uint64_t seed = 0;
  Tensor<float> images;              // (N, C, H, W)
  std::vector<int> labels;           // true labels; kNonsense for nonsense samples
  std::vector<std::int64_t> origins; // clean-sample id, or noise-image id for nonsense
};

/// Everything needed to emit a sample set at any beta: base images plus a
/// beta-independent direction (sign pattern or Gaussian field).
struct PerturbationPlan {
  PerturbKind kind = PerturbKind::Adversarial;
  std::uint64_t seed = 0;
  Tensor<float> base;
  Tensor<float> direction;
  std::vector<int> labels;
  std::vector<std::int64_t> origins;

  SampleSet at(double beta) const;
  std::size_t size() const { return labels.size(); }
};

PerturbationPlan plan_adversarial(const Model<float>& model, const Tensor<float>& images,
                                  std::span<const int> labels, std::span<const std::int64_t> ids,
                                  const HybridLossParams& params, std::uint64_t seed);
PerturbationPlan plan_nonsense(const Model<float>& model, std::size_t count, std::uint64_t seed,
                               const HybridLossParams& params);
PerturbationPlan plan_noisy(const Tensor<float>& images, std::span<const int> labels,
                            std::span<const std::int64_t> ids, std::uint64_t seed);

}  // namespace saf
