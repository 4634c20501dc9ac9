#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saf/activations.hpp"
#include "saf/kernels.hpp"
#include "saf/losses.hpp"
#include "saf/tensor.hpp"

namespace saf {

enum class DatasetKind { Mnist, Cifar10 };
enum class Variant { Plain, Rbf, MRelu };

std::string to_string(DatasetKind kind);
std::string to_string(Variant variant);
DatasetKind dataset_from_string(std::string_view name);
Variant variant_from_string(std::string_view name);

enum class LayerKind { Conv, MaxPool, AvgPool, Linear, Activation, Loss };

struct LayerSpec {
  LayerKind kind = LayerKind::Activation;
  std::string name;
  std::size_t outputs = 0;  // conv output channels, linear output units
  std::size_t kernel = 0;   // conv kernel extent or pooling window
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool batch_norm = false;  // conv only: normalize the conv output before the next layer
  Activation activation = Activation::Relu;
  LossKind loss = LossKind::Softmax;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// A network architecture. The last layer is always the loss layer; the layer
/// count therefore matches the "#Layers" convention of the model tables
/// (batch-norm is part of its convolution, not a layer of its own).
struct ModelSpec {
  std::string dataset = "custom";
  std::string variant = "custom";
  std::size_t channels = 1, height = 1, width = 1;
  double input_scale = 1.0;  // applied to the raw input before the first layer
  std::size_t num_classes = 0;
  std::vector<LayerSpec> layers;

  LossKind loss_kind() const;
  bool robust() const { return loss_kind() == LossKind::Hybrid; }
  std::size_t layer_count() const { return layers.size(); }
  Shape sample_shape() const { return {channels, height, width}; }
  /// Layer names in order, e.g. "cv1 mReLU max cv2 ...".
  std::string describe() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ModelOptions {
  /// Unset: robust variants normalize after every convolution, plain ones do not.
  std::optional<bool> batch_norm;
};

/// Architecture for one (dataset, variant) cell of the model tables.
ModelSpec model_spec(DatasetKind dataset, Variant variant, const ModelOptions& options = {});

std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const std::string& text);

template <class T>
struct LayerState {
  Tensor<T> weights, bias;  // conv / linear
  Tensor<T> gamma, beta;    // batch-norm affine
  BatchNormStats<T> stats;  // batch-norm running statistics
};

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  bool decay;  // weight decay applies (weights only)
};

template <class T>
struct ConstParamRef {
  std::string name;
  const Tensor<T>* value;
};

template <class T>
class Model {
 public:
  explicit Model(ModelSpec spec);

  /// He-normal weights (std sqrt(2 / fan_in)), zero biases, unit batch-norm scale.
  void initialize(std::uint64_t seed);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::vector<LayerState<T>>& layers() noexcept { return layers_; }
  const std::vector<LayerState<T>>& layers() const noexcept { return layers_; }

  /// Per-sample shape entering layer i (shape_in(layer_count - 1) is the score shape).
  const Shape& shape_in(std::size_t layer) const { return shapes_[layer]; }

  /// Trainable tensors in a fixed order; gradients are reported in this order.
  std::vector<ParamRef<T>> parameters();
  /// Every tensor a checkpoint must carry: parameters followed by running statistics.
  std::vector<ParamRef<T>> named_tensors();
  std::vector<ConstParamRef<T>> named_tensors() const;

  BatchNormConfig batch_norm_config;

  template <class U>
  Model<U> cast() const;

 private:
  ModelSpec spec_;
  std::vector<LayerState<T>> layers_;
  std::vector<Shape> shapes_;
};

template <class T>
struct ForwardTrace {
  Mode mode = Mode::Eval;
  std::vector<Tensor<T>> inputs;    // input of every non-loss layer
  std::vector<Tensor<T>> conv_raw;  // pre-normalization conv output (batch-norm convs only)
};

/// Eval-mode forward: returns scores (N, L). Logits for plain models, SAF outputs for robust ones.
template <class T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& batch, ForwardTrace<T>* trace = nullptr);

/// Train-mode forward: batch statistics, running statistics updated in place.
template <class T>
Tensor<T> forward_train(Model<T>& model, const Tensor<T>& batch, ForwardTrace<T>& trace);

template <class T>
struct Gradients {
  std::vector<Tensor<T>> params;  // aligned with Model::parameters()
  Tensor<T> input;                // d / d raw input (input_scale included)
};

/// Backpropagates d(objective)/d(scores) through the traced forward pass.
template <class T>
Gradients<T> backward(const Model<T>& model, const ForwardTrace<T>& trace,
                      const Tensor<T>& score_grad, GradRequest request = {});

template <class T>
struct LossAndGradients {
  double loss = 0.0;
  Tensor<T> scores;
  Gradients<T> grads;
};

/// Forward, model loss (softmax or hybrid per the spec), and backward in one call.
/// Train mode updates the batch-norm running statistics.
template <class T>
LossAndGradients<T> loss_and_gradients(Model<T>& model, const Tensor<T>& batch,
                                       std::span<const int> labels, const HybridLossParams& params,
                                       Mode mode, GradRequest request = {});

/// d score_j / d input for every sample and category: shape (N, L, C, H, W). Eval mode.
template <class T>
Tensor<T> input_jacobian(const Model<T>& model, const Tensor<T>& batch, Tensor<T>* scores = nullptr);

struct ClassDecision {
  int label = kNonsense;
  double confidence = 0.0;
};

inline constexpr double kDefaultDecisionThreshold = 0.5;

/// Argmax category when its confidence reaches the threshold (inclusive), NONSENSE otherwise.
ClassDecision decide(std::span<const double> confidences, double threshold = kDefaultDecisionThreshold);

/// Confidences the decision rule sees: softmax probabilities for plain models,
/// raw SAF scores for robust ones.
std::vector<double> confidences(const ModelSpec& spec, std::span<const double> scores);

template <class T>
std::vector<ClassDecision> decide_batch(const ModelSpec& spec, const Tensor<T>& scores,
                                        double threshold = kDefaultDecisionThreshold);

}  // namespace saf
