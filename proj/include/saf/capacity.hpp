#pragma once

// Two-layer SAF blocks that judge membership in a hypersphere around a
// template point, their calibration, and Monte-Carlo verification.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "saf/activations.hpp"
#include "saf/losses.hpp"

namespace saf {

struct CapacityBlock {
  std::vector<double> center;
  double radius = 1.0;
  double lambda = 1.0;
  double tau = 0.5;
  Activation activation = Activation::Rbf1d;

  std::size_t dim() const { return center.size(); }
};

/// r_k = lambda (x_k - z_k), s_k = sigma(r_k), t = sum s_k - n, y = sigma(t).
double block_eval(const CapacityBlock& block, std::span<const double> x);

struct BoundPair {
  double f1 = 1.0;  // y at an offset of length r along one coordinate axis
  double f2 = 1.0;  // y at the diagonal offset r / sqrt(n) in every coordinate
};

BoundPair bound_functions(const CapacityBlock& block, double r);

/// Smallest radius at which the probe function drops to `tau`, by bisection on
/// [0, 10 sqrt(n) / lambda]. `diagonal` selects f2 over f1.
double bound_inverse(const CapacityBlock& block, bool diagonal, double tau);

struct Calibration {
  double lambda = 0.0;
  double tau = 0.0;
  double ratio = 0.0;     // f2^-1(tau) / f1^-1(tau)
  double required = 0.0;  // (1 - eps)^(1/n)
  double inner_radius = 0.0;
};

/// Sweeps lambda over 64 log-spaced values in [1e-3, 10] from the largest down
/// and returns the first pair with tau = f1(r) whose ratio reaches the
/// requirement. ConfigError reporting the best ratio if none does.
Calibration calibrate(std::size_t n, double r, double eps, Activation activation = Activation::Rbf1d);

std::vector<double> lambda_grid();

struct SphereCheck {
  std::size_t samples = 0;
  double min = 0.0, max = 0.0;
  double lower = 0.0, upper = 0.0;
  std::size_t violations = 0;  // points outside [lower - 1e-12, upper + 1e-12]
};

/// Evaluates y at `samples` uniform points on the radius-r sphere around the
/// center and counts points outside [min(f1, f2), max(f1, f2)] (the ordered bounds).
SphereCheck sphere_bound_check(const CapacityBlock& block, double r, std::size_t samples, std::uint64_t seed);

/// Same sampling, against the bounds in the literal order lower = f1, upper = f2.
SphereCheck sphere_bound_check_literal(const CapacityBlock& block, double r, std::size_t samples,
                                       std::uint64_t seed);

struct IouEstimate {
  double iou = 0.0;
  double half_width = 0.0;  // 99% normal-approximation binomial interval
  std::size_t samples = 0;
  std::size_t in_both = 0, in_either = 0, in_ball = 0, in_region = 0;
};

/// Monte-Carlo IoU of {y >= tau} and the radius-r ball, sampled uniformly in
/// the cube of side 2 r (1 + margin) around the center.
IouEstimate verify_iou(const CapacityBlock& block, std::size_t samples, std::uint64_t seed, double margin = 0.25);

class TemplateClassifier {
 public:
  /// ConfigError if two templates of different labels are closer than 2 r.
  TemplateClassifier(std::vector<CapacityBlock> blocks, std::vector<int> labels);

  /// Label of the block with the largest y if that y reaches tau, else kNonsense.
  int classify(std::span<const double> x) const;

  const std::vector<CapacityBlock>& blocks() const { return blocks_; }
  const std::vector<int>& labels() const { return labels_; }

 private:
  std::vector<CapacityBlock> blocks_;
  std::vector<int> labels_;
};

/// Classifier spec file: {"n", "r", "eps", "activation", "templates": [{"label", "center"}]}.
struct CapacitySpec {
  std::size_t n = 2;
  double r = 1.0;
  double eps = 0.1;
  Activation activation = Activation::Rbf1d;
  std::vector<std::vector<double>> centers;
  std::vector<int> labels;
};

CapacitySpec capacity_spec_from_json(const std::string& text);
std::string capacity_spec_to_json(const CapacitySpec& spec);

}  // namespace saf
