#include "saf/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace saf {
namespace {

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const char* what) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError(std::string("report CSV: bad ") + what + " '" + s + "'");
  return v;
}

std::string row_name(const EvalRow& row) { return row.model + "@" + to_string(row.kind); }

double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<std::int64_t> iota_ids(std::size_t n) {
  std::vector<std::int64_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::int64_t{0});
  return ids;
}

}  // namespace

bool decision_correct(const ClassDecision& decision, int label) { return decision.label == label; }

ErrorCount count_errors(const Model<float>& model, const Tensor<float>& images, std::span<const int> labels,
                        double threshold, std::size_t batch_size) {
  const std::size_t n = images.dim(0);
  if (labels.size() != n)
    throw DimensionError("count_errors: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                         " samples on axis 0");
  if (n == 0) throw DataError("count_errors: empty sample set");
  ErrorCount out;
  out.total = n;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    const Tensor<float> scores = forward(model, slice_leading(images, begin, end));
    const auto decisions = decide_batch(model.spec(), scores, threshold);
    for (std::size_t i = begin; i < end; ++i)
      if (!decision_correct(decisions[i - begin], labels[i])) ++out.errors;
  }
  return out;
}

std::vector<double> beta_grid(DatasetKind dataset) {
  if (dataset == DatasetKind::Mnist) return {0.01, 0.02, 0.03, 0.04, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.40, 0.50};
  return {0.010, 0.015, 0.020, 0.025, 0.030, 0.035, 0.040, 0.045, 0.050, 0.075, 0.100, 0.150};
}

EvalReport sweep(const Model<float>& model, const std::string& model_name, const Tensor<float>& images,
                 std::span<const int> labels, const SweepOptions& options) {
  if (images.empty()) throw DataError("sweep: empty sample set");
  for (double b : options.betas)
    if (!(b > 0.0)) throw ConfigError("sweep: grid strengths must be positive, got " + std::to_string(b));
  const std::size_t n = options.limit ? std::min(options.limit, images.dim(0)) : images.dim(0);
  const Tensor<float> subset = slice_leading(images, 0, n);
  const std::span<const int> sublabels = labels.first(n);
  const auto ids = iota_ids(n);

  EvalReport report;
  report.dataset = model.spec().dataset;
  report.betas = options.betas;
  for (PerturbKind kind : options.kinds) {
    PerturbationPlan plan;
    switch (kind) {
      case PerturbKind::Adversarial:
        plan = plan_adversarial(model, subset, sublabels, ids, options.loss, options.seed);
        break;
      case PerturbKind::Nonsense: plan = plan_nonsense(model, options.nonsense_count, options.seed, options.loss); break;
      case PerturbKind::Noisy: plan = plan_noisy(subset, sublabels, ids, options.seed); break;
    }
    EvalRow row{model_name, kind, {}};
    row.cells.push_back(count_errors(model, plan.base, plan.labels, options.threshold));
    for (double beta : options.betas) {
      const SampleSet set = plan.at(beta);
      row.cells.push_back(count_errors(model, set.images, set.labels, options.threshold));
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

EvalReport score_sets(const Model<float>& model, const std::string& model_name, const std::string& dataset,
                      const std::vector<SampleSet>& sets, double threshold) {
  EvalReport report;
  report.dataset = dataset;
  for (const auto& s : sets)
    if (s.beta > 0.0 && std::find(report.betas.begin(), report.betas.end(), s.beta) == report.betas.end())
      report.betas.push_back(s.beta);
  std::sort(report.betas.begin(), report.betas.end());
  for (PerturbKind kind : {PerturbKind::Adversarial, PerturbKind::Nonsense, PerturbKind::Noisy}) {
    EvalRow row{model_name, kind, std::vector<ErrorCount>(report.betas.size() + 1)};
    bool any = false;
    for (const auto& s : sets) {
      if (s.kind != kind) continue;
      any = true;
      const std::size_t col =
          s.beta == 0.0 ? 0
                        : 1 + static_cast<std::size_t>(std::find(report.betas.begin(), report.betas.end(), s.beta) -
                                                       report.betas.begin());
      row.cells[col] = count_errors(model, s.images, s.labels, threshold);
    }
    if (any) report.rows.push_back(std::move(row));
  }
  return report;
}

void merge_reports(EvalReport& into, const EvalReport& more) {
  if (into.rows.empty() && into.betas.empty()) {
    into = more;
    return;
  }
  if (into.betas != more.betas) throw ConfigError("merge_reports: strength grids differ");
  into.rows.insert(into.rows.end(), more.rows.begin(), more.rows.end());
}

std::string render_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "beta,clean";
  for (double b : report.betas) os << ',' << shortest(b);
  os << ",samples\nPSNR,";
  for (double b : report.betas) os << ',' << fixed(psnr(b), 2);
  os << ",\n";
  for (const auto& row : report.rows) {
    os << row_name(row);
    for (const auto& c : row.cells) os << ',' << shortest(c.rate());
    os << ',' << (row.cells.empty() ? 0 : row.cells.back().total) << '\n';
  }
  return os.str();
}

EvalReport parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  EvalReport report;
  if (!std::getline(is, line)) throw DataError("report CSV: empty");
  auto head = split(line, ',');
  if (head.size() < 3 || head[0] != "beta" || head[1] != "clean" || head.back() != "samples")
    throw DataError("report CSV: unexpected header '" + line + "'");
  for (std::size_t i = 2; i + 1 < head.size(); ++i) report.betas.push_back(parse_double(head[i], "strength"));
  if (!std::getline(is, line) || line.rfind("PSNR,", 0) != 0) throw DataError("report CSV: missing PSNR row");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != head.size()) throw DataError("report CSV: row '" + cells[0] + "' has wrong column count");
    const auto at = cells[0].rfind('@');
    if (at == std::string::npos) throw DataError("report CSV: row name '" + cells[0] + "' lacks @kind");
    EvalRow row{cells[0].substr(0, at), perturb_kind_from_string(cells[0].substr(at + 1)), {}};
    const auto total = static_cast<std::size_t>(parse_double(cells.back(), "sample count"));
    for (std::size_t i = 1; i + 1 < cells.size(); ++i) {
      const double rate = parse_double(cells[i], "error rate");
      row.cells.push_back({static_cast<std::size_t>(std::llround(rate * static_cast<double>(total))), total});
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string render_text(const EvalReport& report) {
  std::size_t name_w = 6;
  for (const auto& r : report.rows) name_w = std::max(name_w, row_name(r).size());
  std::ostringstream os;
  auto cell = [&](const std::string& s) { os << std::setw(7) << s; };
  os << std::left << std::setw(static_cast<int>(name_w)) << "beta" << std::right;
  cell("clean");
  int beta_digits = 2;
  for (double b : report.betas)
    if (std::abs(b * 100 - std::round(b * 100)) > 1e-9) beta_digits = 3;
  for (double b : report.betas) cell(fixed(b, beta_digits));
  os << '\n' << std::left << std::setw(static_cast<int>(name_w)) << "PSNR" << std::right;
  cell("");
  for (double b : report.betas) cell(fixed(psnr(b), 2));
  os << '\n';
  for (const auto& r : report.rows) {
    os << std::left << std::setw(static_cast<int>(name_w)) << row_name(r) << std::right;
    for (const auto& c : r.cells) cell(fixed(c.rate(), 3));
    os << '\n';
  }
  return os.str();
}

std::string plot_data(const EvalReport& report, const EvalRow& row) {
  std::ostringstream os;
  os << "# " << row_name(row) << "\n# beta accuracy\n";
  for (std::size_t i = 0; i < row.cells.size(); ++i) {
    const double beta = i == 0 ? 0.0 : report.betas.at(i - 1);
    os << shortest(beta) << ' ' << shortest(1.0 - row.cells[i].rate()) << '\n';
  }
  return os.str();
}

FeatureStats channel_stats(std::span<const double> values, std::size_t samples, std::size_t channels,
                           std::size_t bins) {
  if (values.size() != samples * channels) throw DimensionError("channel_stats: value count mismatch");
  if (bins == 0) throw ConfigError("channel_stats: need at least one bin");
  FeatureStats s;
  s.samples = samples;
  s.mean.assign(channels, 0.0);
  s.stddev.assign(channels, 0.0);
  s.zero_variance.assign(channels, false);
  s.histograms.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < samples; ++i) {
      const double v = values[i * channels + c];
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    s.mean[c] = samples ? sum / static_cast<double>(samples) : 0.0;
    double ss = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
      const double d = values[i * channels + c] - s.mean[c];
      ss += d * d;
    }
    s.stddev[c] = samples ? std::sqrt(ss / static_cast<double>(samples)) : 0.0;
    s.zero_variance[c] = ss == 0.0;
    Histogram& h = s.histograms[c];
    h.min = samples ? lo : 0.0;
    h.max = samples ? hi : 0.0;
    h.counts.assign(bins, 0);
    for (std::size_t i = 0; i < samples; ++i) {
      std::size_t b = 0;
      if (hi > lo) {
        b = static_cast<std::size_t>((values[i * channels + c] - lo) / (hi - lo) * static_cast<double>(bins));
        b = std::min(b, bins - 1);
      }
      ++h.counts[b];
    }
  }
  s.correlation.assign(channels * channels, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t a = 0; a < channels; ++a) {
    if (s.zero_variance[a]) continue;
    for (std::size_t b = a; b < channels; ++b) {
      if (s.zero_variance[b]) continue;
      double cov = 0.0, va = 0.0, vb = 0.0;
      for (std::size_t i = 0; i < samples; ++i) {
        const double da = values[i * channels + a] - s.mean[a];
        const double db = values[i * channels + b] - s.mean[b];
        cov += da * db;
        va += da * da;
        vb += db * db;
      }
      const double r = a == b ? 1.0 : cov / std::sqrt(va * vb);
      s.correlation[a * channels + b] = r;
      s.correlation[b * channels + a] = r;
    }
  }
  return s;
}

FeatureStats feature_stats(const Model<float>& model, const Tensor<float>& images, const std::string& layer,
                           std::optional<std::pair<std::size_t, std::size_t>> entry, std::size_t bins) {
  const auto& layers = model.spec().layers;
  std::size_t idx = layers.size();
  for (std::size_t i = 0; i + 1 < layers.size(); ++i)
    if (layers[i].name == layer) idx = i;
  if (idx == layers.size()) throw ConfigError("feature_stats: no layer named '" + layer + "'");
  const Shape& out_shape = model.shape_in(idx + 1);
  const bool spatial = out_shape.size() == 3;
  if (!spatial && entry) throw ConfigError("feature_stats: layer '" + layer + "' has no spatial features");
  if (spatial && !entry) throw ConfigError("feature_stats: layer '" + layer + "' needs a spatial entry");
  if (spatial && (entry->first >= out_shape[1] || entry->second >= out_shape[2]))
    throw ConfigError("feature_stats: entry outside the " + shape_string(out_shape) + " feature map");

  const std::size_t n = images.dim(0);
  const std::size_t channels = out_shape[0];
  std::vector<double> values(n * channels);
  constexpr std::size_t kBatch = 500;
  for (std::size_t begin = 0; begin < n; begin += kBatch) {
    const std::size_t end = std::min(n, begin + kBatch);
    ForwardTrace<float> trace;
    const Tensor<float> scores = forward(model, slice_leading(images, begin, end), &trace);
    const Tensor<float>& out = idx + 1 < trace.inputs.size() ? trace.inputs[idx + 1] : scores;
    const std::size_t per = out.size() / (end - begin);
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t c = 0; c < channels; ++c) {
        std::size_t off = (i - begin) * per;
        off += spatial ? (c * out_shape[1] + entry->first) * out_shape[2] + entry->second : c;
        values[i * channels + c] = out[off];
      }
  }
  FeatureStats s = channel_stats(values, n, channels, bins);
  s.layer = layer;
  s.entry = entry;
  return s;
}

std::string feature_stats_json(const FeatureStats& s) {
  using nlohmann::json;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json j;
  j["layer"] = s.layer;
  j["entry"] = s.entry ? json{s.entry->first, s.entry->second} : json(nullptr);
  j["samples"] = s.samples;
  j["mean"] = s.mean;
  j["stddev"] = s.stddev;
  j["zero_variance"] = s.zero_variance;
  j["histograms"] = json::array();
  for (const auto& h : s.histograms) j["histograms"].push_back({{"min", h.min}, {"max", h.max}, {"counts", h.counts}});
  j["correlation"] = json::array();
  for (double v : s.correlation) j["correlation"].push_back(num(v));
  return j.dump(1);
}

NormSummary summarize(std::vector<double> norms) {
  NormSummary s;
  s.norms = std::move(norms);
  if (s.norms.empty()) return s;
  std::vector<double> sorted = s.norms;
  std::sort(sorted.begin(), sorted.end());
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  s.median = quantile(sorted, 0.5);
  s.q10 = quantile(sorted, 0.1);
  s.q25 = quantile(sorted, 0.25);
  s.q75 = quantile(sorted, 0.75);
  s.q90 = quantile(sorted, 0.9);
  return s;
}

NormSummary gradient_norm_probe(const Model<float>& model, const Tensor<float>& images, std::size_t batch_size) {
  const std::size_t n = images.dim(0);
  std::vector<double> norms(n);
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    ForwardTrace<float> trace;
    const Tensor<float> scores = forward(model, slice_leading(images, begin, end), &trace);
    const std::size_t l = scores.dim(1);
    Tensor<float> upstream({end - begin, l});
    for (std::size_t i = 0; i < end - begin; ++i) {
      const float* row = scores.raw() + i * l;
      upstream[i * l + static_cast<std::size_t>(std::max_element(row, row + l) - row)] = 1.0f;
    }
    const Tensor<float> g = backward(model, trace, upstream, {true, false}).input;
    const std::size_t per = g.size() / (end - begin);
    for (std::size_t i = 0; i < end - begin; ++i) {
      double ss = 0.0;
      for (std::size_t p = 0; p < per; ++p) ss += static_cast<double>(g[i * per + p]) * g[i * per + p];
      norms[begin + i] = std::sqrt(ss);
    }
  }
  return summarize(std::move(norms));
}

}  // namespace saf
