#include "saf/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "json.hpp"

namespace saf {
namespace {

using nlohmann::json;

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::Linear: return "linear";
    case LayerKind::Activation: return "activation";
    case LayerKind::Loss: return "loss";
  }
  return "unknown";
}

LayerKind layer_kind_from_name(const std::string& name) {
  for (LayerKind k : {LayerKind::Conv, LayerKind::MaxPool, LayerKind::AvgPool, LayerKind::Linear,
                      LayerKind::Activation, LayerKind::Loss})
    if (layer_kind_name(k) == name) return k;
  throw ConfigError("unknown layer kind '" + name + "'");
}

std::string display_name(const LayerSpec& layer) {
  switch (layer.kind) {
    case LayerKind::Conv:
    case LayerKind::Linear: return layer.name;
    case LayerKind::MaxPool: return "max";
    case LayerKind::AvgPool: return "avg";
    case LayerKind::Activation:
      switch (layer.activation) {
        case Activation::Rbf1d: return "1-D RBF";
        case Activation::MRelu: return "mReLU";
        case Activation::Relu: return "ReLU";
        case Activation::Sigmoid: return "sigmoid";
      }
      break;
    case LayerKind::Loss: return layer.loss == LossKind::Softmax ? "sloss" : "hloss";
  }
  return layer.name;
}

LayerSpec conv_layer(std::string name, std::size_t outputs, std::size_t pad, bool batch_norm) {
  LayerSpec l;
  l.kind = LayerKind::Conv;
  l.name = std::move(name);
  l.outputs = outputs;
  l.kernel = 5;
  l.stride = 1;
  l.pad = pad;
  l.batch_norm = batch_norm;
  return l;
}

LayerSpec pool_layer(LayerKind kind, std::string name) {
  LayerSpec l;
  l.kind = kind;
  l.name = std::move(name);
  l.kernel = 2;
  l.stride = 2;
  return l;
}

LayerSpec linear_layer(std::string name, std::size_t outputs) {
  LayerSpec l;
  l.kind = LayerKind::Linear;
  l.name = std::move(name);
  l.outputs = outputs;
  return l;
}

LayerSpec activation_layer(std::string name, Activation kind) {
  LayerSpec l;
  l.kind = LayerKind::Activation;
  l.name = std::move(name);
  l.activation = kind;
  return l;
}

LayerSpec loss_layer(LossKind kind) {
  LayerSpec l;
  l.kind = LayerKind::Loss;
  l.name = "loss";
  l.loss = kind;
  return l;
}

}  // namespace

std::string to_string(DatasetKind kind) { return kind == DatasetKind::Mnist ? "mnist" : "cifar10"; }

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::Plain: return "plain";
    case Variant::Rbf: return "rbf";
    case Variant::MRelu: return "mrelu";
  }
  return "unknown";
}

DatasetKind dataset_from_string(std::string_view name) {
  if (name == "mnist") return DatasetKind::Mnist;
  if (name == "cifar10" || name == "cifar-10" || name == "cifar") return DatasetKind::Cifar10;
  throw ConfigError("unknown dataset '" + std::string(name) + "' (expected mnist or cifar10)");
}

Variant variant_from_string(std::string_view name) {
  if (name == "plain") return Variant::Plain;
  if (name == "rbf") return Variant::Rbf;
  if (name == "mrelu") return Variant::MRelu;
  throw ConfigError("unknown variant '" + std::string(name) + "' (expected plain, rbf or mrelu)");
}

LossKind ModelSpec::loss_kind() const {
  if (layers.empty() || layers.back().kind != LayerKind::Loss)
    throw ConfigError("model spec: last layer must be a loss layer");
  return layers.back().loss;
}

std::string ModelSpec::describe() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) os << (i ? " " : "") << display_name(layers[i]);
  return os.str();
}

ModelSpec model_spec(DatasetKind dataset, Variant variant, const ModelOptions& options) {
  const bool robust = variant != Variant::Plain;
  const bool bn = options.batch_norm.value_or(robust);
  const Activation saf = variant == Variant::Rbf ? Activation::Rbf1d : Activation::MRelu;
  ModelSpec spec;
  spec.dataset = to_string(dataset);
  spec.variant = to_string(variant);
  spec.input_scale = 1.0 / 255.0;
  spec.num_classes = 10;
  auto& L = spec.layers;
  auto maybe_saf = [&](const std::string& name) {
    if (robust) L.push_back(activation_layer(name, saf));
  };

  if (dataset == DatasetKind::Mnist) {
    spec.channels = 1;
    spec.height = spec.width = 28;
    L.push_back(conv_layer("cv1", 20, 0, bn));
    maybe_saf("saf1");
    L.push_back(pool_layer(LayerKind::MaxPool, "pool1"));
    L.push_back(conv_layer("cv2", 50, 0, bn));
    maybe_saf("saf2");
    L.push_back(pool_layer(LayerKind::MaxPool, "pool2"));
    L.push_back(linear_layer("fc1", 500));
  } else {
    spec.channels = 3;
    spec.height = spec.width = 32;
    L.push_back(conv_layer("cv1", 32, 2, bn));
    maybe_saf("saf1");
    L.push_back(pool_layer(LayerKind::MaxPool, "pool1"));
    L.push_back(conv_layer("cv2", 32, 2, bn));
    maybe_saf("saf2");
    L.push_back(pool_layer(LayerKind::AvgPool, "pool2"));
    L.push_back(conv_layer("cv3", 64, 2, bn));
    maybe_saf("saf3");
    L.push_back(pool_layer(LayerKind::AvgPool, "pool3"));
    L.push_back(linear_layer("fc1", 64));
  }
  L.push_back(activation_layer("relu", Activation::Relu));
  L.push_back(linear_layer("fc2", 10));
  if (robust) L.push_back(activation_layer("rbf", Activation::Rbf1d));
  L.push_back(loss_layer(robust ? LossKind::Hybrid : LossKind::Softmax));
  return spec;
}

std::string spec_to_json(const ModelSpec& spec) {
  json j;
  j["dataset"] = spec.dataset;
  j["variant"] = spec.variant;
  j["input"] = {spec.channels, spec.height, spec.width};
  j["input_scale"] = spec.input_scale;
  j["num_classes"] = spec.num_classes;
  j["layers"] = json::array();
  for (const auto& l : spec.layers) {
    json lj = {{"kind", layer_kind_name(l.kind)}, {"name", l.name}};
    switch (l.kind) {
      case LayerKind::Conv:
        lj.update({{"outputs", l.outputs}, {"kernel", l.kernel}, {"stride", l.stride},
                   {"pad", l.pad}, {"batch_norm", l.batch_norm}});
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        lj.update({{"window", l.kernel}, {"stride", l.stride}});
        break;
      case LayerKind::Linear: lj["outputs"] = l.outputs; break;
      case LayerKind::Activation: lj["activation"] = to_string(l.activation); break;
      case LayerKind::Loss: lj["loss"] = to_string(l.loss); break;
    }
    j["layers"].push_back(std::move(lj));
  }
  return j.dump();
}

ModelSpec spec_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ModelSpec spec;
    spec.dataset = j.at("dataset").get<std::string>();
    spec.variant = j.at("variant").get<std::string>();
    const auto in = j.at("input");
    spec.channels = in.at(0).get<std::size_t>();
    spec.height = in.at(1).get<std::size_t>();
    spec.width = in.at(2).get<std::size_t>();
    spec.input_scale = j.at("input_scale").get<double>();
    spec.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = layer_kind_from_name(lj.at("kind").get<std::string>());
      l.name = lj.at("name").get<std::string>();
      switch (l.kind) {
        case LayerKind::Conv:
          l.outputs = lj.at("outputs").get<std::size_t>();
          l.kernel = lj.at("kernel").get<std::size_t>();
          l.stride = lj.at("stride").get<std::size_t>();
          l.pad = lj.at("pad").get<std::size_t>();
          l.batch_norm = lj.at("batch_norm").get<bool>();
          break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
          l.kernel = lj.at("window").get<std::size_t>();
          l.stride = lj.at("stride").get<std::size_t>();
          break;
        case LayerKind::Linear: l.outputs = lj.at("outputs").get<std::size_t>(); break;
        case LayerKind::Activation:
          l.activation = activation_from_string(lj.at("activation").get<std::string>());
          break;
        case LayerKind::Loss:
          l.loss = lj.at("loss").get<std::string>() == "softmax" ? LossKind::Softmax : LossKind::Hybrid;
          break;
      }
      spec.layers.push_back(std::move(l));
    }
    return spec;
  } catch (const json::exception& e) {
    throw DataError(std::string("model spec: malformed JSON: ") + e.what());
  }
}

template <class T>
Model<T>::Model(ModelSpec spec) : spec_(std::move(spec)) {
  if (spec_.layers.empty() || spec_.layers.back().kind != LayerKind::Loss)
    throw ConfigError("model spec: last layer must be a loss layer");
  layers_.resize(spec_.layers.size());
  shapes_.push_back(spec_.sample_shape());
  for (std::size_t i = 0; i + 1 < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const Shape& in = shapes_.back();
    auto& st = layers_[i];
    Shape out;
    switch (l.kind) {
      case LayerKind::Conv: {
        if (in.size() != 3)
          throw ConfigError("model spec: " + l.name + " needs a spatial input, got " + shape_string(in));
        if (l.kernel > in[1] + 2 * l.pad || l.kernel > in[2] + 2 * l.pad)
          throw ConfigError("model spec: " + l.name + " kernel exceeds its input " + shape_string(in));
        st.weights = Tensor<T>({l.outputs, in[0], l.kernel, l.kernel});
        st.bias = Tensor<T>({l.outputs});
        if (l.batch_norm) {
          st.gamma = Tensor<T>({l.outputs}, T{1});
          st.beta = Tensor<T>({l.outputs});
          st.stats = batchnorm_init_stats<T>(l.outputs);
        }
        out = {l.outputs, conv_output_extent(in[1], l.kernel, l.stride, l.pad),
               conv_output_extent(in[2], l.kernel, l.stride, l.pad)};
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        if (in.size() != 3 || l.kernel > in[1] || l.kernel > in[2])
          throw ConfigError("model spec: " + l.name + " window does not fit input " + shape_string(in));
        out = {in[0], (in[1] - l.kernel) / l.stride + 1, (in[2] - l.kernel) / l.stride + 1};
        break;
      case LayerKind::Linear:
        st.weights = Tensor<T>({l.outputs, shape_product(in)});
        st.bias = Tensor<T>({l.outputs});
        out = {l.outputs};
        break;
      case LayerKind::Activation: out = in; break;
      case LayerKind::Loss:
        throw ConfigError("model spec: loss layer must be last");
    }
    shapes_.push_back(std::move(out));
  }
  if (shapes_.back() != Shape{spec_.num_classes})
    throw ConfigError("model spec: score shape " + shape_string(shapes_.back()) + " does not match " +
                      std::to_string(spec_.num_classes) + " categories");
}

template <class T>
void Model<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  for (std::size_t i = 0; i + 1 < spec_.layers.size(); ++i) {
    auto& st = layers_[i];
    if (st.weights.empty()) continue;
    const std::size_t fan_in = st.weights.size() / st.weights.dim(0);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& w : st.weights.data()) w = static_cast<T>(dist(gen));
    st.bias.fill(T{0});
    if (spec_.layers[i].batch_norm) {
      st.gamma.fill(T{1});
      st.beta.fill(T{0});
      st.stats = batchnorm_init_stats<T>(st.gamma.size());
    }
  }
}

template <class T>
std::vector<ParamRef<T>> Model<T>::parameters() {
  std::vector<ParamRef<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    auto& st = layers_[i];
    if (l.kind != LayerKind::Conv && l.kind != LayerKind::Linear) continue;
    out.push_back({l.name + ".weight", &st.weights, true});
    out.push_back({l.name + ".bias", &st.bias, false});
    if (l.kind == LayerKind::Conv && l.batch_norm) {
      out.push_back({l.name + ".bn.gamma", &st.gamma, false});
      out.push_back({l.name + ".bn.beta", &st.beta, false});
    }
  }
  return out;
}

template <class T>
std::vector<ParamRef<T>> Model<T>::named_tensors() {
  auto out = parameters();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    if (l.kind != LayerKind::Conv || !l.batch_norm) continue;
    out.push_back({l.name + ".bn.running_mean", &layers_[i].stats.running_mean, false});
    out.push_back({l.name + ".bn.running_var", &layers_[i].stats.running_var, false});
  }
  return out;
}

template <class T>
std::vector<ConstParamRef<T>> Model<T>::named_tensors() const {
  std::vector<ConstParamRef<T>> out;
  for (auto& r : const_cast<Model<T>*>(this)->named_tensors()) out.push_back({r.name, r.value});
  return out;
}

template <class T>
template <class U>
Model<U> Model<T>::cast() const {
  Model<U> out(spec_);
  out.batch_norm_config = batch_norm_config;
  auto src = named_tensors();
  auto dst = out.named_tensors();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = src[i].value->template cast<U>();
  return out;
}

namespace {

template <class T>
void check_batch(const ModelSpec& spec, const Tensor<T>& batch, const char* op) {
  if (batch.rank() != 4 || batch.dim(0) == 0)
    throw DimensionError(std::string(op) + ": batch must be rank 4 (N, C, H, W), got " +
                         shape_string(batch.shape()));
  Shape expected{batch.dim(0), spec.channels, spec.height, spec.width};
  require_shape(batch.shape(), expected, op);
}

template <class T>
Tensor<T> run_forward(const Model<T>& model, Model<T>* mutable_model, const Tensor<T>& batch,
                      Mode mode, ForwardTrace<T>* trace) {
  const ModelSpec& spec = model.spec();
  check_batch(spec, batch, "forward");
  const std::size_t n = batch.dim(0);
  Tensor<T> x = batch;
  const T scale = static_cast<T>(spec.input_scale);
  if (scale != T{1})
    for (auto& v : x.data()) v *= scale;
  if (trace) {
    trace->mode = mode;
    trace->inputs.clear();
    trace->conv_raw.assign(spec.layers.size(), Tensor<T>());
  }
  for (std::size_t i = 0; i + 1 < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const LayerState<T>& st = model.layers()[i];
    Tensor<T> y;
    switch (l.kind) {
      case LayerKind::Conv:
        y = conv2d_forward(x, st.weights, st.bias, l.stride, l.pad);
        if (l.batch_norm) {
          BatchNormStats<T>* update =
              mode == Mode::Train && mutable_model ? &mutable_model->layers()[i].stats : nullptr;
          Tensor<T> normalized = batchnorm_forward(y, st.gamma, st.beta, st.stats, mode,
                                                   model.batch_norm_config, update);
          if (trace) trace->conv_raw[i] = std::move(y);
          y = std::move(normalized);
        }
        break;
      case LayerKind::MaxPool: y = maxpool_forward(x, l.kernel, l.stride); break;
      case LayerKind::AvgPool: y = avgpool_forward(x, l.kernel, l.stride); break;
      case LayerKind::Linear: y = linear_forward(x, st.weights, st.bias); break;
      case LayerKind::Activation: y = activate(l.activation, x); break;
      case LayerKind::Loss: break;
    }
    if (trace) trace->inputs.push_back(std::move(x));
    x = std::move(y);
  }
  x.reshape({n, spec.num_classes});
  return x;
}

}  // namespace

template <class T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& batch, ForwardTrace<T>* trace) {
  return run_forward(model, static_cast<Model<T>*>(nullptr), batch, Mode::Eval, trace);
}

template <class T>
Tensor<T> forward_train(Model<T>& model, const Tensor<T>& batch, ForwardTrace<T>& trace) {
  return run_forward(model, &model, batch, Mode::Train, &trace);
}

template <class T>
Gradients<T> backward(const Model<T>& model, const ForwardTrace<T>& trace,
                      const Tensor<T>& score_grad, GradRequest request) {
  const ModelSpec& spec = model.spec();
  const std::size_t layers = spec.layers.size() - 1;
  if (trace.inputs.size() != layers)
    throw DimensionError("backward: trace holds " + std::to_string(trace.inputs.size()) +
                         " layer inputs, model has " + std::to_string(layers));
  const std::size_t n = trace.inputs.front().dim(0);
  require_shape(score_grad.shape(), {n, spec.num_classes}, "backward score gradient");

  // Offsets of each layer's parameters inside Model::parameters().
  std::vector<std::size_t> offset(layers, 0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < layers; ++i) {
    offset[i] = count;
    const LayerSpec& l = spec.layers[i];
    if (l.kind == LayerKind::Conv) count += l.batch_norm ? 4 : 2;
    if (l.kind == LayerKind::Linear) count += 2;
  }

  Gradients<T> out;
  if (request.params) out.params.resize(count);
  Tensor<T> g = score_grad;
  for (std::size_t idx = layers; idx-- > 0;) {
    const LayerSpec& l = spec.layers[idx];
    const LayerState<T>& st = model.layers()[idx];
    const Tensor<T>& input = trace.inputs[idx];
    const bool need_input = idx > 0 || request.input;
    switch (l.kind) {
      case LayerKind::Conv: {
        if (l.batch_norm) {
          LayerGrad<T> bg = batchnorm_backward(trace.conv_raw[idx], st.gamma, g, st.stats, trace.mode,
                                               model.batch_norm_config, {true, request.params});
          if (request.params) {
            out.params[offset[idx] + 2] = std::move(bg.param_grads[0]);
            out.params[offset[idx] + 3] = std::move(bg.param_grads[1]);
          }
          g = std::move(bg.input_grad);
        }
        LayerGrad<T> cg = conv2d_backward(input, st.weights, g, l.stride, l.pad,
                                          {need_input, request.params});
        if (request.params) {
          out.params[offset[idx]] = std::move(cg.param_grads[0]);
          out.params[offset[idx] + 1] = std::move(cg.param_grads[1]);
        }
        g = std::move(cg.input_grad);
        break;
      }
      case LayerKind::MaxPool: g = maxpool_backward(input, g, l.kernel, l.stride); break;
      case LayerKind::AvgPool: g = avgpool_backward(input, g, l.kernel, l.stride); break;
      case LayerKind::Linear: {
        LayerGrad<T> lg = linear_backward(input, st.weights, g, {need_input, request.params});
        if (request.params) {
          out.params[offset[idx]] = std::move(lg.param_grads[0]);
          out.params[offset[idx] + 1] = std::move(lg.param_grads[1]);
        }
        g = std::move(lg.input_grad);
        break;
      }
      case LayerKind::Activation: {
        // Activations after a linear layer see (N, F); reshape the upstream to match.
        if (g.shape() != input.shape()) g.reshape(input.shape());
        g = activate_backward(l.activation, input, g);
        break;
      }
      case LayerKind::Loss: break;
    }
    if (!need_input) break;
  }
  if (request.input) {
    const T scale = static_cast<T>(spec.input_scale);
    if (scale != T{1})
      for (auto& v : g.data()) v *= scale;
    out.input = std::move(g);
  }
  return out;
}

template <class T>
LossAndGradients<T> loss_and_gradients(Model<T>& model, const Tensor<T>& batch,
                                       std::span<const int> labels, const HybridLossParams& params,
                                       Mode mode, GradRequest request) {
  ForwardTrace<T> trace;
  LossAndGradients<T> out;
  out.scores = mode == Mode::Train ? forward_train(model, batch, trace) : forward(model, batch, &trace);
  BatchLoss<T> bl = batch_loss(model.spec().loss_kind(), out.scores, labels, params);
  out.loss = bl.loss;
  out.grads = backward(model, trace, bl.grad, request);
  return out;
}

template <class T>
Tensor<T> input_jacobian(const Model<T>& model, const Tensor<T>& batch, Tensor<T>* scores) {
  ForwardTrace<T> trace;
  Tensor<T> s = forward(model, batch, &trace);
  const std::size_t n = batch.dim(0);
  const std::size_t l = model.spec().num_classes;
  const std::size_t per_sample = batch.size() / n;
  Tensor<T> jac({n, l, batch.dim(1), batch.dim(2), batch.dim(3)});
  Tensor<T> upstream({n, l});
  for (std::size_t j = 0; j < l; ++j) {
    upstream.fill(T{0});
    for (std::size_t i = 0; i < n; ++i) upstream[i * l + j] = T{1};
    Gradients<T> g = backward(model, trace, upstream, {true, false});
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(g.input.raw() + i * per_sample, per_sample, jac.raw() + (i * l + j) * per_sample);
  }
  if (scores) *scores = std::move(s);
  return jac;
}

ClassDecision decide(std::span<const double> conf, double threshold) {
  ClassDecision d;
  if (conf.empty()) return d;
  const auto it = std::max_element(conf.begin(), conf.end());
  d.confidence = *it;
  if (*it >= threshold) d.label = static_cast<int>(it - conf.begin());
  return d;
}

std::vector<double> confidences(const ModelSpec& spec, std::span<const double> scores) {
  if (spec.robust()) return {scores.begin(), scores.end()};
  return softmax(scores);
}

template <class T>
std::vector<ClassDecision> decide_batch(const ModelSpec& spec, const Tensor<T>& scores, double threshold) {
  const std::size_t n = scores.dim(0), l = scores.dim(1);
  std::vector<ClassDecision> out(n);
  std::vector<double> row(l);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < l; ++j) row[j] = scores[i * l + j];
    out[i] = decide(confidences(spec, row), threshold);
  }
  return out;
}

#define SAF_INSTANTIATE_MODEL(T)                                                                  \
  template class Model<T>;                                                                        \
  template Tensor<T> forward(const Model<T>&, const Tensor<T>&, ForwardTrace<T>*);                \
  template Tensor<T> forward_train(Model<T>&, const Tensor<T>&, ForwardTrace<T>&);                \
  template Gradients<T> backward(const Model<T>&, const ForwardTrace<T>&, const Tensor<T>&,       \
                                 GradRequest);                                                    \
  template LossAndGradients<T> loss_and_gradients(Model<T>&, const Tensor<T>&,                    \
                                                  std::span<const int>, const HybridLossParams&,  \
                                                  Mode, GradRequest);                             \
  template Tensor<T> input_jacobian(const Model<T>&, const Tensor<T>&, Tensor<T>*);               \
  template std::vector<ClassDecision> decide_batch(const ModelSpec&, const Tensor<T>&, double);

SAF_INSTANTIATE_MODEL(float)
SAF_INSTANTIATE_MODEL(double)

#undef SAF_INSTANTIATE_MODEL

template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;

}  // namespace saf
