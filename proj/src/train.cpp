#include "saf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"
#include "saf/eval.hpp"
#include "saf/perturb.hpp"
#include "saf/rng.hpp"

namespace saf {
namespace {

using nlohmann::json;

// Stream tags for stream_seed.
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kRandomStream = 2;
constexpr std::uint64_t kMeanStream = 3;
constexpr std::uint64_t kAdversarialStream = 4;
constexpr std::uint64_t kFlipStream = 5;

void check_known_keys(const json& patch, const json& base, const std::string& path) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + path + it.key() + "'");
    const json& b = base.at(it.key());
    if (it->is_object() && b.is_object()) check_known_keys(*it, b, path + it.key() + ".");
  }
}

bool any_nonfinite(const Tensor<float>& t) { return !t.all_finite(); }

}  // namespace

TrainConfig TrainConfig::defaults(DatasetKind dataset, Variant variant) {
  TrainConfig c;
  if (dataset == DatasetKind::Mnist) {
    c.epochs = 20;
    c.lr_schedule = {{0, 0.001}};
    c.loss = {1.0, 1.0, 0.0, 2.0};
  } else {
    c.epochs = 90;
    c.lr_schedule = {{0, 0.05}, {60, 0.005}, {80, 0.0005}};
    c.flip = true;
    c.loss = {1.0, 1.0, 1.0 / 9.0, 2.0};
  }
  (void)variant;
  return c;
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double lr = lr_schedule.empty() ? 0.0 : lr_schedule.front().lr;
  for (const auto& s : lr_schedule)
    if (s.epoch <= epoch) lr = s.lr;
  return lr;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
  if (lr_schedule.empty()) throw ConfigError("config: lr_schedule must have at least one step");
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    if (!(lr_schedule[i].lr >= 0.0)) throw ConfigError("config: learning rates must be >= 0");
    if (i && lr_schedule[i].epoch <= lr_schedule[i - 1].epoch)
      throw ConfigError("config: lr_schedule epochs must increase");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("config: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("config: weight_decay must be >= 0");
  if (!(random.delta >= 0.0)) throw ConfigError("config: random.delta must be >= 0");
  if (!(random.fraction >= 0.0 && random.fraction <= 1.0)) throw ConfigError("config: random.fraction must lie in [0, 1]");
  if (!(mean.noise_std >= 0.0)) throw ConfigError("config: mean.noise_std must be >= 0");
  if (!(adversarial.beta >= 0.0)) throw ConfigError("config: adversarial.beta must be >= 0");
  if (adversarial.refresh_epochs == 0) throw ConfigError("config: adversarial.refresh_epochs must be positive");
  if (!(decision_threshold >= 0.0)) throw ConfigError("config: decision_threshold must be >= 0");
  loss.validate();
}

std::string config_to_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr_schedule"] = json::array();
  for (const auto& s : c.lr_schedule) j["lr_schedule"].push_back({{"epoch", s.epoch}, {"lr", s.lr}});
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["flip"] = c.flip;
  j["random"] = {{"enabled", c.random.enabled}, {"delta", c.random.delta}, {"fraction", c.random.fraction},
                 {"spread", c.random.spread}};
  j["mean"] = {{"enabled", c.mean.enabled}, {"copies", c.mean.copies}, {"noise_std", c.mean.noise_std}};
  j["adversarial"] = {{"enabled", c.adversarial.enabled},
                      {"beta", c.adversarial.beta},
                      {"refresh_epochs", c.adversarial.refresh_epochs},
                      {"samples", c.adversarial.samples}};
  j["loss"] = {{"alpha1", c.loss.alpha1}, {"alpha2", c.loss.alpha2}, {"alpha3", c.loss.alpha3}, {"p", c.loss.p}};
  j["batch_norm"] = c.batch_norm ? json(*c.batch_norm) : json(nullptr);
  j["seed"] = c.seed;
  j["train_limit"] = c.train_limit;
  j["test_limit"] = c.test_limit;
  j["evaluate_test"] = c.evaluate_test;
  j["decision_threshold"] = c.decision_threshold;
  return j.dump(2);
}

TrainConfig config_from_json(const std::string& text, const TrainConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  json full = json::parse(config_to_json(base));
  check_known_keys(j, full, "");
  full.merge_patch(j);
  if (j.contains("batch_norm") && j["batch_norm"].is_null()) full["batch_norm"] = nullptr;
  try {
    TrainConfig c;
    c.epochs = full.at("epochs").get<std::size_t>();
    c.batch_size = full.at("batch_size").get<std::size_t>();
    c.lr_schedule.clear();
    for (const auto& s : full.at("lr_schedule")) {
      if (!s.is_object() || s.size() != 2) throw ConfigError("config: lr_schedule entries are {\"epoch\", \"lr\"} objects");
      c.lr_schedule.push_back({s.at("epoch").get<std::size_t>(), s.at("lr").get<double>()});
    }
    c.momentum = full.at("momentum").get<double>();
    c.weight_decay = full.at("weight_decay").get<double>();
    c.flip = full.at("flip").get<bool>();
    const auto& r = full.at("random");
    c.random = {r.at("enabled").get<bool>(), r.at("delta").get<double>(), r.at("fraction").get<double>(),
                r.at("spread").get<bool>()};
    const auto& m = full.at("mean");
    c.mean = {m.at("enabled").get<bool>(), m.at("copies").get<std::size_t>(), m.at("noise_std").get<double>()};
    const auto& a = full.at("adversarial");
    c.adversarial = {a.at("enabled").get<bool>(), a.at("beta").get<double>(), a.at("refresh_epochs").get<std::size_t>(),
                     a.at("samples").get<std::size_t>()};
    const auto& l = full.at("loss");
    c.loss = {l.at("alpha1").get<double>(), l.at("alpha2").get<double>(), l.at("alpha3").get<double>(),
              l.at("p").get<double>()};
    if (!full.at("batch_norm").is_null()) c.batch_norm = full.at("batch_norm").get<bool>();
    c.seed = full.at("seed").get<std::uint64_t>();
    c.train_limit = full.at("train_limit").get<std::size_t>();
    c.test_limit = full.at("test_limit").get<std::size_t>();
    c.evaluate_test = full.at("evaluate_test").get<bool>();
    c.decision_threshold = full.at("decision_threshold").get<double>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::string experiment_tag(Variant variant, const TrainConfig& config) {
  std::string tag = variant == Variant::Plain ? "plain" : variant == Variant::Rbf ? "RBF" : "mReLU";
  if (config.adversarial.enabled) tag += "-a";
  if (config.random.enabled) tag += "-r";
  if (config.mean.enabled) tag += "-m";
  return tag;
}

std::string metric_to_json(const MetricRecord& r) {
  json j = {{"epoch", r.epoch}, {"split", r.split}, {"metric", r.metric}};
  j["value"] = std::isfinite(r.value) ? json(r.value) : json(nullptr);
  return j.dump();
}

std::size_t apply_random_training(Tensor<float>& batch, double delta, double fraction, std::uint64_t seed,
                                  bool spread) {
  if (batch.empty() || delta == 0.0 || fraction == 0.0) return 0;
  const std::size_t n = batch.dim(0), per = batch.size() / n;
  std::size_t perturbed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 gen(stream_seed(seed, {i}));
    std::uniform_real_distribution<double> pick(0.0, 1.0);
    if (!(pick(gen) < fraction)) continue;
    ++perturbed;
    const double bound = spread ? delta * pick(gen) : delta;
    std::uniform_real_distribution<double> noise(-bound, bound);
    float* x = batch.raw() + i * per;
    for (std::size_t p = 0; p < per; ++p)
      x[p] = static_cast<float>(std::clamp(static_cast<double>(x[p]) + noise(gen), 0.0, kPixelMax));
  }
  return perturbed;
}

Tensor<float> mean_image(const Tensor<float>& images) {
  if (images.rank() != 4 || images.dim(0) == 0)
    throw DataError("mean_image: need a non-empty (N, C, H, W) image set");
  const std::size_t n = images.dim(0), per = images.size() / n;
  std::vector<double> acc(per, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < per; ++p) acc[p] += images[i * per + p];
  Tensor<float> out({images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t p = 0; p < per; ++p) out[p] = static_cast<float>(acc[p] / static_cast<double>(n));
  return out;
}

Tensor<float> mean_training_samples(const Tensor<float>& images, std::size_t copies, double noise_std,
                                    std::uint64_t seed) {
  const Tensor<float> mean = mean_image(images);
  const std::size_t per = mean.size();
  Tensor<float> out({copies, mean.dim(0), mean.dim(1), mean.dim(2)});
  for (std::size_t c = 0; c < copies; ++c) {
    std::mt19937_64 gen(stream_seed(seed, {c}));
    std::normal_distribution<double> dist(0.0, 1.0);
    float* dst = out.raw() + c * per;
    for (std::size_t p = 0; p < per; ++p) {
      const double v = noise_std == 0.0 ? mean[p] : mean[p] + noise_std * dist(gen);
      dst[p] = static_cast<float>(std::clamp(v, 0.0, kPixelMax));
    }
  }
  return out;
}

Tensor<float> adversarial_training_refresh(const Model<float>& model, const Tensor<float>& images,
                                           std::span<const int> labels, double beta,
                                           const HybridLossParams& params) {
  return fgs_adversarial(model, images, labels, params, beta);
}

void apply_random_flip(Tensor<float>& batch, std::uint64_t seed) {
  if (batch.empty()) return;
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 gen(stream_seed(seed, {i}));
    if (gen() & 1) continue;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y) {
        float* row = &batch.at(i, ch, y, 0);
        std::reverse(row, row + w);
      }
  }
}

std::string first_nonfinite_layer(const Model<float>& model, const ForwardTrace<float>& trace,
                                  const Tensor<float>& scores) {
  const auto& layers = model.spec().layers;
  if (!trace.inputs.empty() && any_nonfinite(trace.inputs[0])) return "input";
  for (std::size_t i = 0; i < trace.inputs.size(); ++i) {
    const Tensor<float>& out = i + 1 < trace.inputs.size() ? trace.inputs[i + 1] : scores;
    if (any_nonfinite(out)) return layers[i].name;
  }
  return layers.back().name;
}

TrainResult train(Model<float>& model, const Dataset& data, const TrainConfig& config, const MetricSink& sink,
                  std::size_t start_epoch) {
  config.validate();
  const std::size_t n_train =
      config.train_limit ? std::min(config.train_limit, data.train_images.dim(0)) : data.train_images.dim(0);
  if (n_train == 0) throw DataError("train: empty training set");
  const Tensor<float> train_images = slice_leading(data.train_images, 0, n_train);
  const std::span<const int> train_labels(data.train_labels.data(), n_train);
  const std::size_t n_test =
      config.test_limit ? std::min(config.test_limit, data.test_images.dim(0)) : data.test_images.dim(0);

  TrainResult result;
  auto emit = [&](std::size_t epoch, const char* split, const char* metric, double value) {
    MetricRecord r{epoch, split, metric, value};
    if (sink) sink(r);
    result.metrics.push_back(std::move(r));
  };

  Tensor<float> mean_samples;
  if (config.mean.enabled) {
    const std::size_t copies = config.mean.copies ? config.mean.copies : n_train / 100;
    mean_samples = mean_training_samples(train_images, copies, config.mean.noise_std,
                                         stream_seed(config.seed, {kMeanStream}));
  }
  const std::size_t n_mean = mean_samples.empty() ? 0 : mean_samples.dim(0);

  Tensor<float> adv_images;
  std::vector<int> adv_labels;

  bool has_bn = false;
  for (const auto& l : model.spec().layers) has_bn = has_bn || (l.kind == LayerKind::Conv && l.batch_norm);

  auto params = model.parameters();
  std::vector<Tensor<float>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.value->shape());

  for (std::size_t epoch = start_epoch; epoch < start_epoch + config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = config.lr_at(epoch);

    if (config.adversarial.enabled && ((epoch - start_epoch) % config.adversarial.refresh_epochs == 0)) {
      std::vector<std::size_t> pick(n_train);
      std::iota(pick.begin(), pick.end(), std::size_t{0});
      std::mt19937_64 gen(stream_seed(config.seed, {kAdversarialStream, epoch}));
      std::shuffle(pick.begin(), pick.end(), gen);
      const std::size_t m = config.adversarial.samples ? std::min(config.adversarial.samples, n_train) : n_train;
      pick.resize(m);
      std::sort(pick.begin(), pick.end());
      const Tensor<float> src = gather_leading(train_images, std::span<const std::size_t>(pick));
      adv_labels.resize(m);
      for (std::size_t i = 0; i < m; ++i) adv_labels[i] = train_labels[pick[i]];
      adv_images = adversarial_training_refresh(model, src, adv_labels, config.adversarial.beta, config.loss);
    }
    const std::size_t n_adv = adv_labels.size();

    // Pool entries: [0, n_train) clean, then mean-training copies, then adversarial samples.
    const std::size_t pool = n_train + n_mean + n_adv;
    std::vector<std::size_t> order(pool);
    std::iota(order.begin(), order.end(), std::size_t{0});
    {
      std::mt19937_64 gen(stream_seed(config.seed, {kShuffleStream, epoch}));
      std::shuffle(order.begin(), order.end(), gen);
    }

    double loss_sum = 0.0;
    std::size_t seen = 0, wrong = 0, batch_index = 0;
    const Shape sample = model.spec().sample_shape();
    const std::size_t per = shape_product(sample);
    for (std::size_t begin = 0; begin < pool; begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(pool, begin + config.batch_size);
      const std::size_t bn = end - begin;
      if (has_bn && bn < 2) continue;
      Shape shape{bn};
      shape.insert(shape.end(), sample.begin(), sample.end());
      Tensor<float> batch(shape);
      std::vector<int> labels(bn);
      for (std::size_t i = 0; i < bn; ++i) {
        const std::size_t e = order[begin + i];
        const float* src;
        if (e < n_train) {
          src = train_images.raw() + e * per;
          labels[i] = train_labels[e];
        } else if (e < n_train + n_mean) {
          src = mean_samples.raw() + (e - n_train) * per;
          labels[i] = kNonsense;
        } else {
          src = adv_images.raw() + (e - n_train - n_mean) * per;
          labels[i] = adv_labels[e - n_train - n_mean];
        }
        std::copy_n(src, per, batch.raw() + i * per);
      }
      if (config.flip) apply_random_flip(batch, stream_seed(config.seed, {kFlipStream, epoch, batch_index}));
      if (config.random.enabled)
        apply_random_training(batch, config.random.delta, config.random.fraction,
                              stream_seed(config.seed, {kRandomStream, epoch, batch_index}), config.random.spread);

      LossAndGradients<float> lg =
          loss_and_gradients(model, batch, labels, config.loss, Mode::Train, GradRequest{false, true});
      if (!std::isfinite(lg.loss)) {
        Model<float> probe = model;
        ForwardTrace<float> trace;
        const Tensor<float> scores = forward_train(probe, batch, trace);
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": loss is not finite; first non-finite output in layer " +
                           first_nonfinite_layer(model, trace, scores));
      }
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (any_nonfinite(lg.grads.params[k]))
          throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index) + ": non-finite gradient for " + params[k].name);
      }
      for (std::size_t k = 0; k < params.size(); ++k) {
        float* w = params[k].value->raw();
        const float* g = lg.grads.params[k].raw();
        float* v = velocity[k].raw();
        const double wd = params[k].decay ? config.weight_decay : 0.0;
        const std::size_t sz = params[k].value->size();
        for (std::size_t i = 0; i < sz; ++i) {
          const double step = config.momentum * v[i] - lr * (static_cast<double>(g[i]) + wd * w[i]);
          v[i] = static_cast<float>(step);
          w[i] += v[i];
        }
        if (any_nonfinite(*params[k].value))
          throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index) + ": parameter " + params[k].name + " became non-finite");
      }

      loss_sum += lg.loss * static_cast<double>(bn);
      seen += bn;
      const auto decisions = decide_batch(model.spec(), lg.scores, config.decision_threshold);
      for (std::size_t i = 0; i < bn; ++i)
        if (!decision_correct(decisions[i], labels[i])) ++wrong;
    }

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    emit(epoch, "train", "lr", lr);
    emit(epoch, "train", "loss", seen ? loss_sum / static_cast<double>(seen) : 0.0);
    emit(epoch, "train", "error", seen ? static_cast<double>(wrong) / static_cast<double>(seen) : 0.0);
    emit(epoch, "train", "seconds", seconds);
    if (config.evaluate_test && n_test > 0) {
      const Tensor<float> test = slice_leading(data.test_images, 0, n_test);
      const ErrorCount e = count_errors(model, test, std::span<const int>(data.test_labels.data(), n_test),
                                        config.decision_threshold);
      emit(epoch, "test", "error", e.rate());
    }
    ++result.epochs_run;
  }
  return result;
}

}  // namespace saf
