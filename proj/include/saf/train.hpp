#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "saf/datasets.hpp"
#include "saf/losses.hpp"
#include "saf/model.hpp"

namespace saf {

struct LrStep {
  std::size_t epoch = 0;  // first epoch (0-based) using `lr`
  double lr = 0.001;
  friend bool operator==(const LrStep&, const LrStep&) = default;
};

struct RandomTraining {
  bool enabled = false;
  double delta = 25.5;    // pixel units
  double fraction = 0.5;  // probability that a sample is perturbed
  bool spread = false;    // per-sample bound drawn uniformly from [0, delta]
  friend bool operator==(const RandomTraining&, const RandomTraining&) = default;
};

struct MeanTraining {
  bool enabled = false;
  std::size_t copies = 0;   // 0: one copy per 100 training samples
  double noise_std = 25.5;  // pixel units
  friend bool operator==(const MeanTraining&, const MeanTraining&) = default;
};

struct AdversarialTraining {
  bool enabled = false;
  double beta = 0.1;
  std::size_t refresh_epochs = 1;
  std::size_t samples = 10000;  // training images attacked per refresh; 0 = all
  friend bool operator==(const AdversarialTraining&, const AdversarialTraining&) = default;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 100;
  std::vector<LrStep> lr_schedule{{0, 0.001}};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool flip = false;  // random horizontal reflection
  RandomTraining random;
  MeanTraining mean;
  AdversarialTraining adversarial;
  HybridLossParams loss;
  std::optional<bool> batch_norm;
  std::uint64_t seed = 1;
  std::size_t train_limit = 0;  // first N training images; 0 = all
  std::size_t test_limit = 0;   // first N test images scored per epoch; 0 = all
  bool evaluate_test = true;
  double decision_threshold = kDefaultDecisionThreshold;

  /// Defaults for a (dataset, variant) pair, including the hybrid-loss weights for robust variants.
  static TrainConfig defaults(DatasetKind dataset, Variant variant);

  double lr_at(std::size_t epoch) const;
  /// ConfigError on out-of-range values.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

std::string config_to_json(const TrainConfig& config);
/// Keys absent from the JSON keep the values of `base`; unknown keys are a ConfigError.
TrainConfig config_from_json(const std::string& text, const TrainConfig& base = {});

struct MetricRecord {
  std::size_t epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
};

std::string metric_to_json(const MetricRecord& record);

using MetricSink = std::function<void(const MetricRecord&)>;

struct TrainResult {
  std::vector<MetricRecord> metrics;
  std::size_t epochs_run = 0;
};

/// Perturbs each sample with probability `fraction` by i.i.d. uniform noise in
/// [-delta, delta] per pixel, clamped to [0, 255]. With `spread` each perturbed
/// sample first draws its own bound uniformly from [0, delta]. Sample i draws
/// from stream (seed, i). Returns the number of perturbed samples.
std::size_t apply_random_training(Tensor<float>& batch, double delta, double fraction, std::uint64_t seed,
                                  bool spread = false);

/// Per-pixel mean of a (N, C, H, W) image set, shape (C, H, W).
Tensor<float> mean_image(const Tensor<float>& images);

/// `copies` images of mean_image(images) plus N(0, noise_std^2) noise per pixel, clamped.
Tensor<float> mean_training_samples(const Tensor<float>& images, std::size_t copies, double noise_std,
                                    std::uint64_t seed);

/// FGS samples of `images` against the current model, labelled with their true labels.
Tensor<float> adversarial_training_refresh(const Model<float>& model, const Tensor<float>& images,
                                           std::span<const int> labels, double beta,
                                           const HybridLossParams& params);

/// Mirrors every image about its vertical mid-line with probability 0.5 per sample.
void apply_random_flip(Tensor<float>& batch, std::uint64_t seed);

/// Experiment tag such as "plain" or "mReLU-r-m".
std::string experiment_tag(Variant variant, const TrainConfig& config);

/// Runs `config.epochs` epochs starting at `start_epoch` (for resumed runs).
/// Throws NumericError naming the first layer with a non-finite value on divergence.
TrainResult train(Model<float>& model, const Dataset& data, const TrainConfig& config,
                  const MetricSink& sink = {}, std::size_t start_epoch = 0);

/// First layer (by name) whose output is non-finite in `trace`, or "input".
std::string first_nonfinite_layer(const Model<float>& model, const ForwardTrace<float>& trace,
                                  const Tensor<float>& scores);

}  // namespace saf
