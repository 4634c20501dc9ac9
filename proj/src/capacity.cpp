#include "saf/capacity.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "json.hpp"
#include "saf/rng.hpp"

namespace saf {
namespace {

// sigma(v) - 1, without cancellation for the RBF near its peak.
double saf_minus_one(Activation kind, double v) {
  if (kind == Activation::Rbf1d) return std::expm1(-v * v);
  return activate(kind, v) - 1.0;
}

double probe(const CapacityBlock& block, bool diagonal, double rho) {
  const std::size_t n = block.dim();
  std::vector<double> x(block.center);
  if (diagonal) {
    const double step = rho / std::sqrt(static_cast<double>(n));
    for (auto& v : x) v += step;
  } else {
    x[0] += rho;
  }
  return block_eval(block, x);
}

std::vector<double> sphere_point(std::mt19937_64& gen, std::size_t n, double r) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> d(n);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& v : d) {
      v = dist(gen);
      norm += v * v;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& v : d) v *= r / norm;
  return d;
}

SphereCheck sphere_check(const CapacityBlock& block, double r, std::size_t samples, std::uint64_t seed,
                         double lower, double upper) {
  SphereCheck c;
  c.samples = samples;
  c.lower = lower;
  c.upper = upper;
  c.min = 1.0;
  c.max = 0.0;
  std::mt19937_64 gen(stream_seed(seed, {0x737068ULL}));
  std::vector<double> x(block.dim());
  for (std::size_t s = 0; s < samples; ++s) {
    const auto d = sphere_point(gen, block.dim(), r);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = block.center[k] + d[k];
    const double y = block_eval(block, x);
    c.min = std::min(c.min, y);
    c.max = std::max(c.max, y);
    if (y < lower - 1e-12 || y > upper + 1e-12) ++c.violations;
  }
  return c;
}

}  // namespace

double block_eval(const CapacityBlock& block, std::span<const double> x) {
  if (x.size() != block.dim())
    throw DimensionError("block_eval: point has " + std::to_string(x.size()) + " coordinates, block has " +
                         std::to_string(block.dim()));
  double t = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) t += saf_minus_one(block.activation, block.lambda * (x[k] - block.center[k]));
  return activate(block.activation, t);
}

BoundPair bound_functions(const CapacityBlock& block, double r) {
  if (r < 0.0) throw ConfigError("bound_functions: radius must be >= 0");
  return {probe(block, false, r), probe(block, true, r)};
}

double bound_inverse(const CapacityBlock& block, bool diagonal, double tau) {
  double lo = 0.0;
  double hi = 10.0 / block.lambda * std::sqrt(static_cast<double>(block.dim()));
  if (probe(block, diagonal, hi) >= tau) return hi;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (probe(block, diagonal, mid) >= tau ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> lambda_grid() {
  std::vector<double> g(64);
  const double a = std::log(1e-3), b = std::log(10.0);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::exp(a + (b - a) * static_cast<double>(i) / 63.0);
  g.front() = 1e-3;
  g.back() = 10.0;
  return g;
}

Calibration calibrate(std::size_t n, double r, double eps, Activation activation) {
  if (n == 0) throw ConfigError("calibrate: dimension must be positive");
  if (!(r > 0.0)) throw ConfigError("calibrate: radius must be positive");
  if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("calibrate: eps must lie in (0, 1)");
  const double required = std::pow(1.0 - eps, 1.0 / static_cast<double>(n));
  auto grid = lambda_grid();
  double best_ratio = 0.0, best_lambda = 0.0;
  for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
    CapacityBlock block{std::vector<double>(n, 0.0), r, *it, 0.0, activation};
    const double tau = bound_functions(block, r).f1;
    if (!(tau > 0.0 && tau < 1.0)) continue;
    const double outer = bound_inverse(block, false, tau);
    const double inner = bound_inverse(block, true, tau);
    const double ratio = outer > 0.0 ? inner / outer : 0.0;
    if (ratio > best_ratio) {
      best_ratio = ratio;
      best_lambda = *it;
    }
    if (ratio >= required) return {*it, tau, ratio, required, inner};
  }
  throw ConfigError("calibrate: no lambda in [1e-3, 10] reaches ratio " + std::to_string(required) + " (best " +
                    std::to_string(best_ratio) + " at lambda " + std::to_string(best_lambda) + ")");
}

SphereCheck sphere_bound_check(const CapacityBlock& block, double r, std::size_t samples, std::uint64_t seed) {
  const BoundPair b = bound_functions(block, r);
  return sphere_check(block, r, samples, seed, std::min(b.f1, b.f2), std::max(b.f1, b.f2));
}

SphereCheck sphere_bound_check_literal(const CapacityBlock& block, double r, std::size_t samples,
                                       std::uint64_t seed) {
  const BoundPair b = bound_functions(block, r);
  return sphere_check(block, r, samples, seed, b.f1, b.f2);
}

IouEstimate verify_iou(const CapacityBlock& block, std::size_t samples, std::uint64_t seed, double margin) {
  constexpr std::size_t kChunk = 1 << 16;
  const std::size_t n = block.dim();
  const double half = block.radius * (1.0 + margin);
  const double r2 = block.radius * block.radius;
  const std::size_t chunks = (samples + kChunk - 1) / kChunk;
  std::size_t both = 0, either = 0, ball = 0, region = 0;
#pragma omp parallel for schedule(static) reduction(+ : both, either, ball, region)
  for (std::size_t c = 0; c < chunks; ++c) {
    std::mt19937_64 gen(stream_seed(seed, {0x696f75ULL, c}));
    std::uniform_real_distribution<double> u(-half, half);
    std::vector<double> x(n);
    const std::size_t count = std::min(kChunk, samples - c * kChunk);
    for (std::size_t s = 0; s < count; ++s) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double d = u(gen);
        d2 += d * d;
        x[k] = block.center[k] + d;
      }
      const bool in_ball = d2 <= r2;
      const bool in_region = block_eval(block, x) >= block.tau;
      ball += in_ball;
      region += in_region;
      both += in_ball && in_region;
      either += in_ball || in_region;
    }
  }
  IouEstimate e;
  e.samples = samples;
  e.in_both = both;
  e.in_either = either;
  e.in_ball = ball;
  e.in_region = region;
  if (either) {
    e.iou = static_cast<double>(both) / static_cast<double>(either);
    e.half_width = 2.576 * std::sqrt(e.iou * (1.0 - e.iou) / static_cast<double>(either));
  }
  return e;
}

TemplateClassifier::TemplateClassifier(std::vector<CapacityBlock> blocks, std::vector<int> labels)
    : blocks_(std::move(blocks)), labels_(std::move(labels)) {
  if (blocks_.size() != labels_.size()) throw ConfigError("template classifier: one label per template required");
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].dim() != blocks_[0].dim()) throw ConfigError("template classifier: templates differ in dimension");
    for (std::size_t j = i + 1; j < blocks_.size(); ++j) {
      if (labels_[i] == labels_[j]) continue;
      double d2 = 0.0;
      for (std::size_t k = 0; k < blocks_[i].dim(); ++k) {
        const double d = blocks_[i].center[k] - blocks_[j].center[k];
        d2 += d * d;
      }
      if (std::sqrt(d2) < blocks_[i].radius + blocks_[j].radius)
        throw ConfigError("template classifier: templates " + std::to_string(i) + " and " + std::to_string(j) +
                          " of different labels overlap");
    }
  }
}

int TemplateClassifier::classify(std::span<const double> x) const {
  double best = -1.0;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const double y = block_eval(blocks_[i], x);
    if (y > best) {
      best = y;
      arg = i;
    }
  }
  if (blocks_.empty() || best < blocks_[arg].tau) return kNonsense;
  return labels_[arg];
}

CapacitySpec capacity_spec_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    CapacitySpec s;
    s.n = j.at("n").get<std::size_t>();
    s.r = j.at("r").get<double>();
    s.eps = j.at("eps").get<double>();
    s.activation = activation_from_string(j.value("activation", std::string("rbf1d")));
    for (const auto& t : j.value("templates", nlohmann::json::array())) {
      s.centers.push_back(t.at("center").get<std::vector<double>>());
      s.labels.push_back(t.at("label").get<int>());
      if (s.centers.back().size() != s.n)
        throw ConfigError("capacity spec: template of dimension " + std::to_string(s.centers.back().size()) +
                          ", expected " + std::to_string(s.n));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("capacity spec: ") + e.what());
  }
}

std::string capacity_spec_to_json(const CapacitySpec& s) {
  nlohmann::json j = {{"n", s.n}, {"r", s.r}, {"eps", s.eps}, {"activation", to_string(s.activation)}};
  j["templates"] = nlohmann::json::array();
  for (std::size_t i = 0; i < s.centers.size(); ++i)
    j["templates"].push_back({{"label", s.labels[i]}, {"center", s.centers[i]}});
  return j.dump(2);
}

}  // namespace saf
