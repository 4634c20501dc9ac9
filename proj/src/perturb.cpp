#include "saf/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "saf/rng.hpp"

namespace saf {
namespace {

std::vector<double> score_loss_grad(LossKind kind, std::span<const double> row, int label,
                                    const HybridLossParams& params) {
  if (label == kNonsense)
    return kind == LossKind::Softmax ? softmax_nonsense_loss(row).grad : hybrid_nonsense_loss(row, params).grad;
  if (label < 0 || static_cast<std::size_t>(label) >= row.size())
    throw DataError("label " + std::to_string(label) + " out of range");
  const auto l = static_cast<std::size_t>(label);
  return kind == LossKind::Softmax ? softmax_log_loss(row, l).grad : hybrid_loss_grad(row, l, params);
}

template <class T>
T clamp_pixel(double v, double hi) {
  return static_cast<T>(std::clamp(v, 0.0, hi));
}

}  // namespace

std::string to_string(PerturbKind kind) {
  switch (kind) {
    case PerturbKind::Adversarial: return "adversarial";
    case PerturbKind::Nonsense: return "nonsense";
    case PerturbKind::Noisy: return "noisy";
  }
  return "unknown";
}

PerturbKind perturb_kind_from_string(std::string_view name) {
  if (name == "adversarial") return PerturbKind::Adversarial;
  if (name == "nonsense") return PerturbKind::Nonsense;
  if (name == "noisy") return PerturbKind::Noisy;
  throw ConfigError("unknown sample kind '" + std::string(name) + "' (expected adversarial, nonsense or noisy)");
}

void AttackConfig::validate() const {
  if (!(beta >= 0.0)) throw ConfigError("attack strength beta must be >= 0, got " + std::to_string(beta));
  if (!(pixel_scale > 0.0)) throw ConfigError("pixel scale must be positive");
}

template <class T>
Tensor<T> loss_input_gradient(const Model<T>& model, const Tensor<T>& images, std::span<const int> labels,
                              const HybridLossParams& params) {
  ForwardTrace<T> trace;
  const Tensor<T> scores = forward(model, images, &trace);
  const std::size_t n = scores.dim(0), l = scores.dim(1);
  if (labels.size() != n)
    throw DimensionError("loss_input_gradient: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " samples on axis 0");
  Tensor<T> upstream({n, l});
  std::vector<double> row(l);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < l; ++j) row[j] = scores[i * l + j];
    const auto g = score_loss_grad(model.spec().loss_kind(), row, labels[i], params);
    for (std::size_t j = 0; j < l; ++j) upstream[i * l + j] = static_cast<T>(g[j]);
  }
  return backward(model, trace, upstream, {true, false}).input;
}

template <class T>
FgsDirection<T> fgs_direction(const Model<T>& model, const Tensor<T>& images, std::span<const int> labels,
                              const HybridLossParams& params, std::size_t batch_size) {
  const std::size_t n = images.dim(0);
  if (labels.size() != n)
    throw DimensionError("fgs_direction: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " samples on axis 0");
  const std::size_t per = images.size() / std::max<std::size_t>(n, 1);
  const std::size_t l = model.spec().num_classes;
  const LossKind kind = model.spec().loss_kind();
  FgsDirection<T> out;
  out.step = Tensor<T>(images.shape());
  out.targets.assign(n, kNonsense);
  batch_size = std::max<std::size_t>(batch_size, 1);

  std::vector<double> row(l), grad(per), best(per);
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    Tensor<T> scores;
    const Tensor<T> jac = input_jacobian(model, slice_leading(images, begin, end), &scores);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t b = i - begin;
      for (std::size_t j = 0; j < l; ++j) row[j] = scores[b * l + j];
      double best_norm = -1.0;
      int best_label = kNonsense;
      for (std::size_t cand = 0; cand < l; ++cand) {
        if (static_cast<int>(cand) == labels[i]) continue;
        const auto d = score_loss_grad(kind, row, static_cast<int>(cand), params);
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t j = 0; j < l; ++j) {
          if (d[j] == 0.0) continue;
          const T* jj = jac.raw() + (b * l + j) * per;
          for (std::size_t p = 0; p < per; ++p) grad[p] += d[j] * static_cast<double>(jj[p]);
        }
        double norm = 0.0;
        for (double g : grad) norm += std::abs(g);
        if (norm > best_norm) {
          best_norm = norm;
          best_label = static_cast<int>(cand);
          best.swap(grad);
        }
      }
      out.targets[i] = best_label;
      T* dst = out.step.raw() + i * per;
      for (std::size_t p = 0; p < per; ++p) dst[p] = best[p] > 0.0 ? T{-1} : (best[p] < 0.0 ? T{1} : T{0});
    }
  }
  return out;
}

template <class T>
Tensor<T> apply_step(const Tensor<T>& base, const Tensor<T>& direction, double beta, double pixel_scale) {
  require_shape(direction.shape(), base.shape(), "apply_step direction");
  if (!(beta >= 0.0)) throw ConfigError("attack strength beta must be >= 0, got " + std::to_string(beta));
  Tensor<T> out(base.shape());
  const double step = pixel_scale * beta;
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(base.size());
  const T* b = base.raw();
  const T* d = direction.raw();
  T* o = out.raw();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    o[i] = clamp_pixel<T>(static_cast<double>(b[i]) + step * static_cast<double>(d[i]), pixel_scale);
  return out;
}

template <class T>
Tensor<T> fgs_adversarial(const Model<T>& model, const Tensor<T>& images, std::span<const int> labels,
                          const HybridLossParams& params, double beta) {
  if (!(beta >= 0.0)) throw ConfigError("attack strength beta must be >= 0, got " + std::to_string(beta));
  if (beta == 0.0) return images;
  return apply_step(images, fgs_direction(model, images, labels, params).step, beta);
}

Tensor<float> gaussian_field(const Shape& shape, std::uint64_t seed, std::span<const std::int64_t> ids) {
  Tensor<float> out(shape);
  const std::size_t n = shape.empty() ? 0 : shape[0];
  if (ids.size() != n)
    throw DimensionError("gaussian_field: " + std::to_string(ids.size()) + " ids for " + std::to_string(n) +
                         " rows on axis 0");
  const std::size_t per = n ? out.size() / n : 0;
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    std::mt19937_64 gen(stream_seed(seed, {0x6e6f697379ULL, static_cast<std::uint64_t>(ids[i])}));
    std::normal_distribution<double> dist(0.0, 1.0);
    float* dst = out.raw() + static_cast<std::size_t>(i) * per;
    for (std::size_t p = 0; p < per; ++p) dst[p] = static_cast<float>(dist(gen));
  }
  return out;
}

Tensor<float> nonsense_base(std::size_t count, const Shape& sample_shape, std::uint64_t seed,
                            std::int64_t first_id) {
  Shape shape{count};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Tensor<float> out(shape);
  const std::size_t per = shape_product(sample_shape);
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    std::mt19937_64 gen(stream_seed(seed, {0x6e6f6e73656eULL, static_cast<std::uint64_t>(first_id + i)}));
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> g(per);
    for (auto& v : g) v = dist(gen);
    const auto [lo, hi] = std::minmax_element(g.begin(), g.end());
    const double mn = *lo, range = *hi - *lo;
    float* dst = out.raw() + static_cast<std::size_t>(i) * per;
    for (std::size_t p = 0; p < per; ++p)
      dst[p] = range > 0.0 ? static_cast<float>((g[p] - mn) / range * kPixelMax) : 0.0f;
  }
  return out;
}

Tensor<float> noisy_sample(const Tensor<float>& images, double beta, std::uint64_t seed,
                           std::span<const std::int64_t> ids) {
  if (!(beta >= 0.0)) throw ConfigError("noise strength beta must be >= 0, got " + std::to_string(beta));
  return apply_step(images, gaussian_field(images.shape(), seed, ids), beta);
}

double psnr(double beta) {
  if (beta < 0.0) throw ConfigError("psnr: beta must be >= 0");
  if (beta == 0.0) return kInfinitePsnr;
  return -20.0 * std::log10(beta);
}

double psnr_images(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty())
    throw DimensionError("psnr_images: images of " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " pixels");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  if (se == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(kPixelMax * kPixelMax / (se / static_cast<double>(a.size())));
}

SampleSet PerturbationPlan::at(double beta) const {
  SampleSet s;
  s.kind = kind;
  s.beta = beta;
  s.seed = seed;
  s.images = beta == 0.0 ? base : apply_step(base, direction, beta);
  s.labels = labels;
  s.origins = origins;
  return s;
}

PerturbationPlan plan_adversarial(const Model<float>& model, const Tensor<float>& images,
                                  std::span<const int> labels, std::span<const std::int64_t> ids,
                                  const HybridLossParams& params, std::uint64_t seed) {
  PerturbationPlan plan;
  plan.kind = PerturbKind::Adversarial;
  plan.seed = seed;
  plan.base = images;
  plan.direction = fgs_direction(model, images, labels, params).step;
  plan.labels.assign(labels.begin(), labels.end());
  plan.origins.assign(ids.begin(), ids.end());
  return plan;
}

PerturbationPlan plan_nonsense(const Model<float>& model, std::size_t count, std::uint64_t seed,
                               const HybridLossParams& params) {
  PerturbationPlan plan;
  plan.kind = PerturbKind::Nonsense;
  plan.seed = seed;
  plan.base = nonsense_base(count, model.spec().sample_shape(), seed);
  plan.labels.assign(count, kNonsense);
  plan.direction = fgs_direction(model, plan.base, plan.labels, params).step;
  plan.origins.resize(count);
  for (std::size_t i = 0; i < count; ++i) plan.origins[i] = static_cast<std::int64_t>(i);
  return plan;
}

PerturbationPlan plan_noisy(const Tensor<float>& images, std::span<const int> labels,
                            std::span<const std::int64_t> ids, std::uint64_t seed) {
  PerturbationPlan plan;
  plan.kind = PerturbKind::Noisy;
  plan.seed = seed;
  plan.base = images;
  plan.direction = gaussian_field(images.shape(), seed, ids);
  plan.labels.assign(labels.begin(), labels.end());
  plan.origins.assign(ids.begin(), ids.end());
  return plan;
}

template Tensor<float> loss_input_gradient(const Model<float>&, const Tensor<float>&, std::span<const int>,
                                           const HybridLossParams&);
template Tensor<double> loss_input_gradient(const Model<double>&, const Tensor<double>&, std::span<const int>,
                                            const HybridLossParams&);
template FgsDirection<float> fgs_direction(const Model<float>&, const Tensor<float>&, std::span<const int>,
                                           const HybridLossParams&, std::size_t);
template FgsDirection<double> fgs_direction(const Model<double>&, const Tensor<double>&, std::span<const int>,
                                            const HybridLossParams&, std::size_t);
template Tensor<float> apply_step(const Tensor<float>&, const Tensor<float>&, double, double);
template Tensor<double> apply_step(const Tensor<double>&, const Tensor<double>&, double, double);
template Tensor<float> fgs_adversarial(const Model<float>&, const Tensor<float>&, std::span<const int>,
                                       const HybridLossParams&, double);
template Tensor<double> fgs_adversarial(const Model<double>&, const Tensor<double>&, std::span<const int>,
                                        const HybridLossParams&, double);

}  // namespace saf
