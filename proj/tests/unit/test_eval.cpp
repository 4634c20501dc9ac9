#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "saf/eval.hpp"
#include "../support/gradcheck.hpp"

namespace saf {
namespace {

void zero_all(Model<float>& m) {
  for (auto& t : m.named_tensors())
    if (t.name.find("running") == std::string::npos)
      for (auto& v : t.value->data()) v = 0.0f;
}

Tensor<float> random_images(std::size_t n, std::uint64_t seed) {
  return testing::random_tensor({n, 1, 28, 28}, static_cast<int>(seed), 0.0, 255.0).cast<float>();
}

std::vector<int> random_labels(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<int> l(n);
  for (auto& v : l) v = static_cast<int>(gen() % 10);
  return l;
}

TEST(CountErrors, ConstantModelMissesOtherClasses) {
  Model<float> m(model_spec(DatasetKind::Mnist, Variant::Plain));
  m.initialize(1);
  zero_all(m);
  m.layers()[6].bias[3] = 20.0f;
  const auto images = random_images(200, 2);
  const auto labels = random_labels(200, 3);
  const auto threes = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 3));
  const auto e = count_errors(m, images, labels, kDefaultDecisionThreshold, 64);
  EXPECT_EQ(e.total, 200u);
  EXPECT_EQ(e.errors, 200u - threes);
  std::vector<int> nonsense(200, kNonsense);
  EXPECT_EQ(count_errors(m, images, nonsense).errors, 200u);
}

TEST(CountErrors, MatchesPerSampleDecisions) {
  Model<float> m(model_spec(DatasetKind::Mnist, Variant::Rbf));
  m.initialize(4);
  const auto images = random_images(37, 5);
  auto labels = random_labels(37, 6);
  labels[0] = kNonsense;
  const auto scores = forward(m, images);
  const auto decisions = decide_batch(m.spec(), scores);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += !decision_correct(decisions[i], labels[i]);
  for (std::size_t batch : {1u, 10u, 500u}) {
    const auto e = count_errors(m, images, labels, kDefaultDecisionThreshold, batch);
    EXPECT_EQ(e.errors, wrong);
    EXPECT_EQ(e.total, labels.size());
  }
  EXPECT_THROW(count_errors(m, images, std::span<const int>(labels).first(3)), DimensionError);
}

TEST(DecisionCorrect, NonsenseRule) {
  EXPECT_TRUE(decision_correct({kNonsense, 0.1}, kNonsense));
  EXPECT_FALSE(decision_correct({2, 0.9}, kNonsense));
  EXPECT_FALSE(decision_correct({kNonsense, 0.1}, 2));
  EXPECT_TRUE(decision_correct({2, 0.9}, 2));
}

TEST(BetaGrid, DatasetGrids) {
  const auto mn = beta_grid(DatasetKind::Mnist);
  ASSERT_EQ(mn.size(), 12u);
  EXPECT_DOUBLE_EQ(mn.front(), 0.01);
  EXPECT_DOUBLE_EQ(mn.back(), 0.5);
  const auto cf = beta_grid(DatasetKind::Cifar10);
  ASSERT_EQ(cf.size(), 12u);
  EXPECT_DOUBLE_EQ(cf.front(), 0.01);
  EXPECT_DOUBLE_EQ(cf.back(), 0.15);
  EXPECT_TRUE(std::is_sorted(mn.begin(), mn.end()));
  EXPECT_TRUE(std::is_sorted(cf.begin(), cf.end()));
}

SweepOptions small_sweep() {
  SweepOptions o;
  o.betas = {0.05, 0.25};
  o.nonsense_count = 20;
  o.limit = 30;
  o.seed = 9;
  return o;
}

TEST(Sweep, CleanColumnAndShape) {
  Model<float> m(model_spec(DatasetKind::Mnist, Variant::Rbf));
  m.initialize(7);
  const auto images = random_images(40, 8);
  const auto labels = random_labels(40, 9);
  const auto r = sweep(m, "rbf", images, labels, small_sweep());
  ASSERT_EQ(r.rows.size(), 3u);
  const auto clean = count_errors(m, slice_leading(images, 0, 30), std::span<const int>(labels).first(30));
  for (const auto& row : r.rows) {
    ASSERT_EQ(row.cells.size(), 3u);
    if (row.kind == PerturbKind::Nonsense) {
      for (const auto& c : row.cells) EXPECT_EQ(c.total, 20u);
    } else {
      EXPECT_EQ(row.cells[0].errors, clean.errors) << to_string(row.kind);
      EXPECT_EQ(row.cells[0].total, 30u);
    }
  }
  const auto again = sweep(m, "rbf", images, labels, small_sweep());
  EXPECT_EQ(render_csv(again), render_csv(r));
  auto bad = small_sweep();
  bad.betas = {0.0};
  EXPECT_THROW(sweep(m, "rbf", images, labels, bad), ConfigError);
}

TEST(Sweep, ScoreSetsAgreesWithSweep) {
  Model<float> m(model_spec(DatasetKind::Mnist, Variant::Plain));
  m.initialize(10);
  const auto images = random_images(30, 11);
  const auto labels = random_labels(30, 12);
  auto opts = small_sweep();
  opts.kinds = {PerturbKind::Noisy};
  const auto r = sweep(m, "plain", images, labels, opts);
  std::vector<std::int64_t> ids(30);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int64_t>(i);
  const auto plan = plan_noisy(images, labels, ids, opts.seed);
  std::vector<SampleSet> sets;
  for (double beta : {0.25, 0.0, 0.05}) sets.push_back(plan.at(beta));
  const auto scored = score_sets(m, "plain", "mnist", sets);
  ASSERT_EQ(scored.rows.size(), 1u);
  EXPECT_EQ(scored.betas, opts.betas);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(scored.rows[0].cells[i].errors, r.rows[0].cells[i].errors) << i;
}

EvalReport toy_report() {
  EvalReport r;
  r.dataset = "mnist";
  r.betas = {0.01, 0.02, 0.5};
  r.rows.push_back({"plain", PerturbKind::Adversarial, {{10, 1000}, {250, 1000}, {999, 1000}, {1000, 1000}}});
  r.rows.push_back({"mReLU-r-m", PerturbKind::Nonsense, {{0, 1000}, {3, 1000}, {7, 1000}, {0, 1000}}});
  return r;
}

TEST(Report, CsvRoundTrip) {
  const auto r = toy_report();
  const auto csv = render_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "beta,clean,0.01,0.02,0.5,samples");
  const auto back = parse_csv(csv);
  EXPECT_EQ(back.betas, r.betas);
  ASSERT_EQ(back.rows.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.rows[i].model, r.rows[i].model);
    EXPECT_EQ(back.rows[i].kind, r.rows[i].kind);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(back.rows[i].cells[k].errors, r.rows[i].cells[k].errors);
  }
  EXPECT_EQ(render_csv(back), csv);
  EXPECT_THROW(parse_csv(""), DataError);
  EXPECT_THROW(parse_csv("beta,clean,0.1,samples\nPSNR,,20.00,\nx,0.1,0.2\n"), DataError);
  EXPECT_THROW(parse_csv("beta,clean,0.1,samples\nPSNR,,20.00,\nnoat,0.1,0.2,5\n"), DataError);
}

std::vector<std::string> psnr_cells(const std::string& csv) {
  const auto start = csv.find("PSNR,,") + 6;
  const auto line = csv.substr(start, csv.find('\n', start) - start);
  std::vector<std::string> out;
  std::size_t pos = 0, comma;
  while ((comma = line.find(',', pos)) != std::string::npos) {
    out.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

TEST(Report, PsnrRows) {
  EvalReport mn{"mnist", beta_grid(DatasetKind::Mnist), {}};
  const std::vector<std::string> want_mn{"40.00", "33.98", "30.46", "27.96", "26.02", "20.00",
                                         "16.48", "13.98", "12.04", "10.46", "7.96",  "6.02"};
  EXPECT_EQ(psnr_cells(render_csv(mn)), want_mn);
  EvalReport cf{"cifar10", beta_grid(DatasetKind::Cifar10), {}};
  const auto cells = psnr_cells(render_csv(cf));
  ASSERT_EQ(cells.size(), 12u);
  EXPECT_EQ(cells.front(), "40.00");
  EXPECT_EQ(cells[1], "36.48");
  EXPECT_EQ(cells.back(), "16.48");
}

TEST(Report, TextAndMerge) {
  auto r = toy_report();
  const auto text = render_text(r);
  EXPECT_NE(text.find("0.250"), std::string::npos);
  EXPECT_NE(text.find("mReLU-r-m@nonsense"), std::string::npos);
  EXPECT_NE(text.find("6.02"), std::string::npos);
  EvalReport empty;
  merge_reports(empty, r);
  EXPECT_EQ(empty.rows.size(), 2u);
  merge_reports(r, toy_report());
  EXPECT_EQ(r.rows.size(), 4u);
  auto other = toy_report();
  other.betas.back() = 0.4;
  EXPECT_THROW(merge_reports(r, other), ConfigError);
  const auto plot = plot_data(r, r.rows[0]);
  EXPECT_NE(plot.find("0 0.99\n"), std::string::npos);
  EXPECT_NE(plot.find("0.5 0\n"), std::string::npos);
}

// Two-pass Pearson correlation, written independently of channel_stats.
double pearson(const std::vector<double>& v, std::size_t n, std::size_t ch, std::size_t a, std::size_t b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += v[i * ch + a];
    mb += v[i * ch + b];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (v[i * ch + a] - ma) * (v[i * ch + b] - mb);
    saa += (v[i * ch + a] - ma) * (v[i * ch + a] - ma);
    sbb += (v[i * ch + b] - mb) * (v[i * ch + b] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

TEST(ChannelStats, CorrelationOracle) {
  constexpr std::size_t n = 500, ch = 5;
  std::mt19937_64 gen(13);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n * ch);
  for (std::size_t i = 0; i < n; ++i) {
    const double common = g(gen);
    for (std::size_t c = 0; c < ch; ++c) v[i * ch + c] = 0.3 * c * common + g(gen) + 10.0 * c;
  }
  for (std::size_t i = 0; i < n; ++i) v[i * ch + 4] = 2.5;
  const auto s = channel_stats(v, n, ch, 16);
  EXPECT_TRUE(s.zero_variance[4]);
  EXPECT_EQ(s.stddev[4], 0.0);
  for (std::size_t a = 0; a < ch; ++a)
    for (std::size_t b = 0; b < ch; ++b) {
      const double r = s.correlation[a * ch + b];
      if (a == 4 || b == 4) {
        EXPECT_TRUE(std::isnan(r));
        continue;
      }
      EXPECT_NEAR(r, pearson(v, n, ch, a, b), 1e-10);
      EXPECT_EQ(r, s.correlation[b * ch + a]);
      if (a == b) EXPECT_EQ(r, 1.0);
    }
  for (std::size_t c = 0; c < ch; ++c) {
    std::size_t total = 0;
    for (auto k : s.histograms[c].counts) total += k;
    EXPECT_EQ(total, n);
  }
  EXPECT_THROW(channel_stats(v, n, ch + 1), DimensionError);
}

TEST(ChannelStats, OrderInvariant) {
  constexpr std::size_t n = 64, ch = 3;
  auto v = testing::random_tensor({n, ch}, 14, -1.0, 1.0);
  std::vector<double> a(v.data().begin(), v.data().end());
  std::vector<double> b(n * ch);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < ch; ++c) b[i * ch + c] = a[(n - 1 - i) * ch + c];
  const auto sa = channel_stats(a, n, ch), sb = channel_stats(b, n, ch);
  for (std::size_t c = 0; c < ch; ++c) {
    EXPECT_NEAR(sa.mean[c], sb.mean[c], 1e-12);
    EXPECT_NEAR(sa.stddev[c], sb.stddev[c], 1e-12);
    EXPECT_EQ(sa.histograms[c].counts, sb.histograms[c].counts);
  }
  for (std::size_t k = 0; k < ch * ch; ++k) EXPECT_NEAR(sa.correlation[k], sb.correlation[k], 1e-12);
}

TEST(FeatureStats, LayerAndEntry) {
  Model<float> m(model_spec(DatasetKind::Mnist, Variant::Rbf));
  m.initialize(15);
  const auto images = random_images(20, 16);
  const auto s = feature_stats(m, images, "cv1", std::make_pair(std::size_t{3}, std::size_t{4}));
  EXPECT_EQ(s.samples, 20u);
  EXPECT_EQ(s.mean.size(), m.shape_in(1)[0]);
  EXPECT_THROW(feature_stats(m, images, "cv1", std::nullopt), ConfigError);
  EXPECT_THROW(feature_stats(m, images, "cv1", std::make_pair(std::size_t{99}, std::size_t{0})), ConfigError);
  EXPECT_THROW(feature_stats(m, images, "nope", std::nullopt), ConfigError);
  const auto json = feature_stats_json(s);
  EXPECT_NE(json.find("\"correlation\""), std::string::npos);
}

TEST(GradientNorm, ZeroForConstantModel) {
  Model<float> m(model_spec(DatasetKind::Mnist, Variant::Rbf));
  m.initialize(17);
  zero_all(m);
  const auto s = gradient_norm_probe(m, random_images(8, 18), 3);
  ASSERT_EQ(s.norms.size(), 8u);
  for (double v : s.norms) EXPECT_EQ(v, 0.0);
}

TEST(GradientNorm, BatchIndependentAndSummary) {
  Model<float> m(model_spec(DatasetKind::Mnist, Variant::Plain));
  m.initialize(19);
  const auto images = random_images(10, 20);
  const auto a = gradient_norm_probe(m, images, 10);
  const auto b = gradient_norm_probe(m, images, 3);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(a.norms[i], b.norms[i], 1e-6 * a.norms[i]);
  for (double v : a.norms) EXPECT_GT(v, 0.0);
  const auto s = summarize({5, 1, 4, 2, 3});
  EXPECT_DOUBLE_EQ(s.mean, 3.0);
  EXPECT_DOUBLE_EQ(s.median, 3.0);
  EXPECT_LE(s.q10, s.q25);
  EXPECT_LE(s.q75, s.q90);
  EXPECT_EQ(s.norms, (std::vector<double>{5, 1, 4, 2, 3}));
}

}  // namespace
}  // namespace saf
