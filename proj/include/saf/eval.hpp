#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "saf/model.hpp"
#include "saf/perturb.hpp"

namespace saf {

struct ErrorCount {
  std::size_t errors = 0;
  std::size_t total = 0;
  double rate() const { return total ? static_cast<double>(errors) / static_cast<double>(total) : 0.0; }
};

/// A decision is correct when it names the true label; for nonsense samples
/// only a NONSENSE decision is correct.
bool decision_correct(const ClassDecision& decision, int label);

ErrorCount count_errors(const Model<float>& model, const Tensor<float>& images, std::span<const int> labels,
                        double threshold = kDefaultDecisionThreshold, std::size_t batch_size = 500);

/// Strength grids for MNIST and CIFAR-10.
std::vector<double> beta_grid(DatasetKind dataset);

struct EvalRow {
  std::string model;
  PerturbKind kind = PerturbKind::Adversarial;
  /// cells[0] is the beta = 0 column: clean test samples for adversarial and
  /// noisy rows, unperturbed noise images for nonsense rows. cells[k] is betas[k-1].
  std::vector<ErrorCount> cells;
};

struct EvalReport {
  std::string dataset;
  std::vector<double> betas;
  std::vector<EvalRow> rows;
};

struct SweepOptions {
  std::vector<PerturbKind> kinds{PerturbKind::Adversarial, PerturbKind::Nonsense, PerturbKind::Noisy};
  std::vector<double> betas;
  std::uint64_t seed = 1;
  std::size_t nonsense_count = 10000;
  std::size_t limit = 0;  // first `limit` test samples; 0 = all
  double threshold = kDefaultDecisionThreshold;
  HybridLossParams loss;
};

/// Generates every (kind, beta) sample set on the fly and scores the model.
EvalReport sweep(const Model<float>& model, const std::string& model_name, const Tensor<float>& images,
                 std::span<const int> labels, const SweepOptions& options);

/// Scores pre-generated sample sets (e.g. read back from an archive). Sets of
/// one kind form one row; beta = 0 sets fill the first column.
EvalReport score_sets(const Model<float>& model, const std::string& model_name, const std::string& dataset,
                      const std::vector<SampleSet>& sets, double threshold = kDefaultDecisionThreshold);

/// Appends the rows of `more`; the beta grids must agree.
void merge_reports(EvalReport& into, const EvalReport& more);

/// Header row: "beta,clean,<betas...>,samples". Row 2: PSNR. Then one row per model@kind.
std::string render_csv(const EvalReport& report);
/// Column-aligned table: rates to three decimals, PSNR to two.
std::string render_text(const EvalReport& report);
EvalReport parse_csv(const std::string& text);
/// "beta accuracy" pairs for one row, beta = 0 first.
std::string plot_data(const EvalReport& report, const EvalRow& row);

struct Histogram {
  double min = 0.0, max = 0.0;
  std::vector<std::size_t> counts;
};

struct FeatureStats {
  std::string layer;
  std::optional<std::pair<std::size_t, std::size_t>> entry;
  std::size_t samples = 0;
  std::vector<double> mean, stddev;
  std::vector<bool> zero_variance;
  std::vector<Histogram> histograms;  // one per channel
  /// Row-major channels x channels; NaN where a channel has zero variance.
  std::vector<double> correlation;
};

/// Values of every channel of `layer`'s output at a spatial entry (row, col)
/// over all images; for non-spatial outputs pass no entry and every unit is a channel.
FeatureStats feature_stats(const Model<float>& model, const Tensor<float>& images, const std::string& layer,
                           std::optional<std::pair<std::size_t, std::size_t>> entry, std::size_t bins = 64);

/// Per-channel statistics of a (samples x channels) row-major matrix.
FeatureStats channel_stats(std::span<const double> values, std::size_t samples, std::size_t channels,
                           std::size_t bins = 64);

std::string feature_stats_json(const FeatureStats& stats);

struct NormSummary {
  std::vector<double> norms;  // per sample, input order
  double mean = 0.0, median = 0.0, q10 = 0.0, q25 = 0.0, q75 = 0.0, q90 = 0.0;
};

/// L2 norm of d y_top / d X (raw pixel input) where top is the highest-scoring
/// category of each sample. Raw model scores: logits for plain models.
NormSummary gradient_norm_probe(const Model<float>& model, const Tensor<float>& images,
                                std::size_t batch_size = 100);

NormSummary summarize(std::vector<double> norms);

}  // namespace saf
