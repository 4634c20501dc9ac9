// safnet: train, attack, evaluate and inspect SAF networks.

#include <omp.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "saf/archive.hpp"
#include "saf/capacity.hpp"
#include "saf/checkpoint.hpp"
#include "saf/datasets.hpp"
#include "saf/eval.hpp"
#include "saf/hash.hpp"
#include "saf/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace saf;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

fs::path dataset_dir(DatasetKind kind, const std::string& flag) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv(kind == DatasetKind::Mnist ? "SAF_MNIST_DIR" : "SAF_CIFAR_DIR");
  if (env && *env) return env;
  throw ConfigError(std::string("no dataset directory: pass --data or set ") +
                    (kind == DatasetKind::Mnist ? "SAF_MNIST_DIR" : "SAF_CIFAR_DIR"));
}

// Run manifest: ties every output file to the resolved inputs.
struct Manifest {
  json j;
  explicit Manifest(const std::string& command, int argc, char** argv) {
    j["command"] = command;
    j["argv"] = std::vector<std::string>(argv, argv + argc);
    j["version"] = SAF_VERSION;
    j["outputs"] = json::array();
  }
  void output(const fs::path& file) {
    j["outputs"].push_back({{"file", file.filename().string()}, {"sha256", sha256_file(file)}});
  }
  void write(const fs::path& dir) { write_text(dir / "manifest.json", j.dump(2) + "\n"); }
};

struct Common {
  std::string out = ".";
  std::uint64_t seed = 1;
  int threads = 0;
  std::string data;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "RNG seed")->capture_default_str();
  cmd->add_option("--threads", c.threads, "OpenMP threads (0 = runtime default)");
  cmd->add_option("--data", c.data, "Dataset directory (else SAF_MNIST_DIR / SAF_CIFAR_DIR)");
}

std::string model_name(const LoadedCheckpoint& ck) {
  TrainConfig cfg = config_from_json(ck.meta.config_json);
  return experiment_tag(variant_from_string(ck.meta.variant), cfg);
}

HybridLossParams checkpoint_loss(const LoadedCheckpoint& ck) { return config_from_json(ck.meta.config_json).loss; }

struct TrainArgs {
  Common common;
  std::string dataset = "mnist", variant = "plain", config;
  bool adversarial = false, random = false, mean = false;
  std::optional<std::size_t> epochs, train_limit, test_limit;
  std::optional<bool> batch_norm;
};

int cmd_train(const TrainArgs& a, int argc, char** argv) {
  const DatasetKind ds = dataset_from_string(a.dataset);
  const Variant variant = variant_from_string(a.variant);
  TrainConfig cfg = TrainConfig::defaults(ds, variant);
  if (!a.config.empty()) {
    const std::string text = read_text(a.config);
    if (variant == Variant::Plain && json::parse(text).contains("loss"))
      throw ConfigError("hybrid-loss weights in " + a.config + " have no effect on the plain variant (softmax loss)");
    cfg = config_from_json(text, cfg);
  }
  cfg.seed = a.common.seed;
  if (a.adversarial) cfg.adversarial.enabled = true;
  if (a.random) cfg.random.enabled = true;
  if (a.mean) cfg.mean.enabled = true;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.train_limit) cfg.train_limit = *a.train_limit;
  if (a.test_limit) cfg.test_limit = *a.test_limit;
  if (a.batch_norm) cfg.batch_norm = a.batch_norm;
  cfg.validate();

  const Dataset data = load_dataset(ds, dataset_dir(ds, a.common.data));
  Model<float> model(model_spec(ds, variant, {cfg.batch_norm}));
  model.initialize(cfg.seed);

  const fs::path out = a.common.out;
  fs::create_directories(out);
  const std::string tag = experiment_tag(variant, cfg);
  std::ofstream metrics(out / "metrics.jsonl", std::ios::trunc);
  std::cerr << "training " << to_string(ds) << " " << tag << ": " << model.spec().describe() << "\n";
  train(model, data, cfg, [&](const MetricRecord& r) {
    metrics << metric_to_json(r) << '\n';
    metrics.flush();
    if (r.metric == "error" || r.metric == "loss")
      std::cerr << "epoch " << r.epoch << " " << r.split << " " << r.metric << " " << r.value << "\n";
  });
  metrics.close();

  const std::string config_json = config_to_json(cfg);
  write_text(out / "config.json", config_json + "\n");
  const fs::path ckpt = out / "checkpoint.saf";
  save_checkpoint(model, {to_string(ds), to_string(variant), cfg.epochs, cfg.seed, config_json}, ckpt);

  Manifest m("train", argc, argv);
  m.j["tag"] = tag;
  m.j["config"] = json::parse(config_json);
  m.j["config_hash"] = sha256_hex(config_json);
  m.j["seed"] = cfg.seed;
  m.j["checkpoint_hash"] = sha256_file(ckpt);
  m.output(ckpt);
  m.output(out / "metrics.jsonl");
  m.output(out / "config.json");
  m.write(out);
  std::cout << sha256_file(ckpt) << "  " << ckpt.string() << "\n";
  return 0;
}

std::vector<PerturbKind> parse_kinds(const std::vector<std::string>& names) {
  std::vector<PerturbKind> out;
  for (const auto& n : names) out.push_back(perturb_kind_from_string(n));
  return out;
}

struct AttackArgs {
  Common common;
  std::string checkpoint;
  std::vector<std::string> kinds{"adversarial", "nonsense", "noisy"};
  std::vector<double> betas;
  std::size_t limit = 0, nonsense_count = 10000;
  bool with_zero = true;
};

int cmd_attack(const AttackArgs& a, int argc, char** argv) {
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const DatasetKind ds = dataset_from_string(ck.meta.dataset);
  const Dataset data = load_dataset(ds, dataset_dir(ds, a.common.data));
  const std::vector<double> betas = a.betas.empty() ? beta_grid(ds) : a.betas;
  const std::size_t n = a.limit ? std::min(a.limit, data.test_images.dim(0)) : data.test_images.dim(0);
  const Tensor<float> images = slice_leading(data.test_images, 0, n);
  const std::span<const int> labels(data.test_labels.data(), n);
  std::vector<std::int64_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::int64_t{0});
  const HybridLossParams loss = checkpoint_loss(ck);

  std::vector<SampleSet> sets;
  for (PerturbKind kind : parse_kinds(a.kinds)) {
    PerturbationPlan plan;
    if (kind == PerturbKind::Adversarial) plan = plan_adversarial(ck.model, images, labels, ids, loss, a.common.seed);
    if (kind == PerturbKind::Nonsense) plan = plan_nonsense(ck.model, a.nonsense_count, a.common.seed, loss);
    if (kind == PerturbKind::Noisy) plan = plan_noisy(images, labels, ids, a.common.seed);
    if (a.with_zero) sets.push_back(plan.at(0.0));
    for (double b : betas) sets.push_back(plan.at(b));
    std::cerr << "generated " << to_string(kind) << " sets for " << betas.size() << " strengths\n";
  }
  const fs::path out = a.common.out;
  write_archive(out, sets);
  Manifest m("attack", argc, argv);
  m.j["checkpoint_hash"] = sha256_file(a.checkpoint);
  m.j["seed"] = a.common.seed;
  m.j["betas"] = betas;
  m.output(out / "manifest.jsonl");
  for (const auto& s : sets) m.output(out / archive_file_name(s.kind, s.beta));
  m.write(out);
  return 0;
}

struct EvalArgs {
  Common common;
  std::vector<std::string> checkpoints;
  std::string archive;
  std::vector<std::string> kinds{"adversarial", "nonsense", "noisy"};
  std::vector<double> betas;
  std::size_t limit = 0, nonsense_count = 10000;
  double threshold = kDefaultDecisionThreshold;
};

int cmd_eval(const EvalArgs& a, int argc, char** argv) {
  EvalReport report;
  Manifest m("eval", argc, argv);
  m.j["checkpoints"] = json::array();
  std::optional<Dataset> data;
  for (const auto& path : a.checkpoints) {
    const LoadedCheckpoint ck = load_checkpoint(path);
    const DatasetKind ds = dataset_from_string(ck.meta.dataset);
    const std::string name = model_name(ck);
    m.j["checkpoints"].push_back({{"path", path}, {"tag", name}, {"sha256", sha256_file(path)}});
    std::cerr << "evaluating " << name << "\n";
    if (!a.archive.empty()) {
      const auto sets = read_archive(a.archive, ck.model.spec().sample_shape());
      merge_reports(report, score_sets(ck.model, name, ck.meta.dataset, sets, a.threshold));
      continue;
    }
    if (!data) data = load_dataset(ds, dataset_dir(ds, a.common.data));
    SweepOptions opt;
    opt.kinds = parse_kinds(a.kinds);
    opt.betas = a.betas.empty() ? beta_grid(ds) : a.betas;
    opt.seed = a.common.seed;
    opt.nonsense_count = a.nonsense_count;
    opt.limit = a.limit;
    opt.threshold = a.threshold;
    opt.loss = checkpoint_loss(ck);
    merge_reports(report, sweep(ck.model, name, data->test_images, data->test_labels, opt));
  }
  // Row order: by kind, then by model.
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const EvalRow& x, const EvalRow& y) { return x.kind < y.kind; });
  const fs::path out = a.common.out;
  write_text(out / "report.csv", render_csv(report));
  write_text(out / "report.txt", render_text(report));
  m.output(out / "report.csv");
  m.output(out / "report.txt");
  for (const auto& row : report.rows) {
    const fs::path p = out / "plots" / (row.model + "@" + to_string(row.kind) + ".dat");
    write_text(p, plot_data(report, row));
  }
  m.j["seed"] = a.common.seed;
  m.write(out);
  std::cout << render_text(report);
  return 0;
}

struct CapacityArgs {
  Common common;
  std::size_t n = 2;
  double r = 1.0, eps = 0.1;
  std::string activation = "rbf1d", spec;
  std::size_t samples = 1000000, sphere_samples = 100000;
};

int cmd_capacity(const CapacityArgs& a, int argc, char** argv) {
  CapacitySpec spec;
  if (!a.spec.empty()) {
    spec = capacity_spec_from_json(read_text(a.spec));
  } else {
    spec.n = a.n;
    spec.r = a.r;
    spec.eps = a.eps;
    spec.activation = activation_from_string(a.activation);
  }
  const Calibration cal = calibrate(spec.n, spec.r, spec.eps, spec.activation);
  CapacityBlock block{std::vector<double>(spec.n, 0.0), spec.r, cal.lambda, cal.tau, spec.activation};
  const IouEstimate iou = verify_iou(block, a.samples, a.common.seed);
  const SphereCheck sphere = sphere_bound_check(block, spec.r, a.sphere_samples, a.common.seed);
  const BoundPair bounds = bound_functions(block, spec.r);

  json report = {{"n", spec.n},
                 {"r", spec.r},
                 {"eps", spec.eps},
                 {"activation", to_string(spec.activation)},
                 {"lambda", cal.lambda},
                 {"tau", cal.tau},
                 {"ratio", cal.ratio},
                 {"required_ratio", cal.required},
                 {"f1", bounds.f1},
                 {"f2", bounds.f2},
                 {"iou", iou.iou},
                 {"iou_ci99_half_width", iou.half_width},
                 {"iou_samples", iou.samples},
                 {"sphere_samples", sphere.samples},
                 {"sphere_min", sphere.min},
                 {"sphere_max", sphere.max},
                 {"sphere_violations", sphere.violations}};
  if (!spec.centers.empty()) {
    std::vector<CapacityBlock> blocks;
    for (const auto& c : spec.centers) blocks.push_back({c, spec.r, cal.lambda, cal.tau, spec.activation});
    TemplateClassifier clf(std::move(blocks), spec.labels);
    report["templates"] = spec.centers.size();
  }
  const fs::path out = a.common.out;
  write_text(out / "capacity.json", report.dump(2) + "\n");
  Manifest m("capacity", argc, argv);
  m.j["seed"] = a.common.seed;
  m.output(out / "capacity.json");
  m.write(out);
  std::cout << report.dump(2) << "\n";
  return 0;
}

struct StatsArgs {
  Common common;
  std::string checkpoint, layer = "cv2";
  std::vector<std::size_t> entry{4, 4};
  std::size_t limit = 0, noise_count = 0;
  double noise_mean = 127.5, noise_std = 50.0;
};

int cmd_stats(const StatsArgs& a, int argc, char** argv) {
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const DatasetKind ds = dataset_from_string(ck.meta.dataset);
  const Dataset data = load_dataset(ds, dataset_dir(ds, a.common.data));
  const std::size_t n = a.limit ? std::min(a.limit, data.test_images.dim(0)) : data.test_images.dim(0);
  std::optional<std::pair<std::size_t, std::size_t>> entry;
  if (a.entry.size() == 2) entry = std::make_pair(a.entry[0], a.entry[1]);
  else if (!a.entry.empty()) throw ConfigError("--entry takes two values (row col) or none");
  const fs::path out = a.common.out;
  Manifest m("stats", argc, argv);
  m.j["checkpoint_hash"] = sha256_file(a.checkpoint);

  const Tensor<float> images = slice_leading(data.test_images, 0, n);
  const FeatureStats s = feature_stats(ck.model, images, a.layer, entry);
  write_text(out / "features.json", feature_stats_json(s) + "\n");
  m.output(out / "features.json");
  auto write_norms = [&](const NormSummary& g, const std::string& name) {
    json gj = {{"mean", g.mean}, {"median", g.median}, {"q10", g.q10}, {"q25", g.q25}, {"q75", g.q75}, {"q90", g.q90},
               {"norms", g.norms}};
    write_text(out / name, gj.dump(1) + "\n");
    m.output(out / name);
  };
  write_norms(gradient_norm_probe(ck.model, images), "gradient_norms.json");
  if (a.noise_count) {
    Tensor<float> noise = gaussian_field(
        [&] {
          Shape sh{a.noise_count};
          const Shape ss = ck.model.spec().sample_shape();
          sh.insert(sh.end(), ss.begin(), ss.end());
          return sh;
        }(),
        a.common.seed, [&] {
          std::vector<std::int64_t> ids(a.noise_count);
          std::iota(ids.begin(), ids.end(), std::int64_t{0});
          return ids;
        }());
    for (auto& v : noise.data()) v = static_cast<float>(std::clamp(a.noise_mean + a.noise_std * v, 0.0, kPixelMax));
    const FeatureStats ns = feature_stats(ck.model, noise, a.layer, entry);
    write_text(out / "features_noise.json", feature_stats_json(ns) + "\n");
    m.output(out / "features_noise.json");
    write_norms(gradient_norm_probe(ck.model, noise), "gradient_norms_noise.json");
  }
  m.write(out);
  std::cerr << "wrote feature statistics for " << a.layer << " over " << n << " test images\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"safnet: symmetric-activation networks, perturbation sweeps and capacity checks"};
  app.require_subcommand(1);
  app.footer(
      "Environment: SAF_MNIST_DIR, SAF_CIFAR_DIR override dataset locations.\n"
      "Exit codes: 0 ok, 2 usage/config error, 3 data error, 4 numeric failure.");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint, metrics and manifest");
  add_common(train_cmd, ta.common);
  train_cmd->add_option("--dataset", ta.dataset, "mnist | cifar10")->capture_default_str();
  train_cmd->add_option("--variant", ta.variant, "plain | rbf | mrelu")->capture_default_str();
  train_cmd->add_flag("-a,--adversarial-training", ta.adversarial, "Adversarial training");
  train_cmd->add_flag("-r,--random-training", ta.random, "Random training");
  train_cmd->add_flag("-m,--mean-training", ta.mean, "Mean training");
  train_cmd->add_option("--config", ta.config, "JSON config overriding the defaults");
  train_cmd->add_option("--epochs", ta.epochs, "Override the epoch count");
  train_cmd->add_option("--train-limit", ta.train_limit, "Use the first N training images");
  train_cmd->add_option("--test-limit", ta.test_limit, "Score the first N test images per epoch");
  train_cmd->add_option("--batch-norm", ta.batch_norm, "Force batch-norm on or off");

  AttackArgs aa;
  auto* attack_cmd = app.add_subcommand("attack", "Generate a sample archive over the strength grid");
  add_common(attack_cmd, aa.common);
  attack_cmd->add_option("--checkpoint", aa.checkpoint, "Model checkpoint")->required();
  attack_cmd->add_option("--kinds", aa.kinds, "adversarial nonsense noisy")->capture_default_str();
  attack_cmd->add_option("--betas", aa.betas, "Strength grid (default: the dataset's table grid)");
  attack_cmd->add_option("--limit", aa.limit, "Use the first N test images");
  attack_cmd->add_option("--nonsense-count", aa.nonsense_count, "Noise images")->capture_default_str();
  attack_cmd->add_flag("!--no-zero", aa.with_zero, "Skip the beta = 0 sets");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Error-rate tables for one or more checkpoints");
  add_common(eval_cmd, ea.common);
  eval_cmd->add_option("--checkpoint", ea.checkpoints, "Model checkpoints (repeatable)")->required();
  eval_cmd->add_option("--archive", ea.archive, "Score a sample archive instead of generating samples");
  eval_cmd->add_option("--kinds", ea.kinds, "adversarial nonsense noisy")->capture_default_str();
  eval_cmd->add_option("--betas", ea.betas, "Strength grid (default: the dataset's table grid)");
  eval_cmd->add_option("--limit", ea.limit, "Use the first N test images");
  eval_cmd->add_option("--nonsense-count", ea.nonsense_count, "Noise images")->capture_default_str();
  eval_cmd->add_option("--threshold", ea.threshold, "Nonsense decision threshold")->capture_default_str();

  CapacityArgs ca;
  auto* cap_cmd = app.add_subcommand("capacity", "Calibrate a hypersphere block and verify it by Monte-Carlo");
  add_common(cap_cmd, ca.common);
  cap_cmd->add_option("--n", ca.n, "Dimension")->capture_default_str();
  cap_cmd->add_option("--r", ca.r, "Radius")->capture_default_str();
  cap_cmd->add_option("--eps", ca.eps, "Target IoU deficit")->capture_default_str();
  cap_cmd->add_option("--activation", ca.activation, "rbf1d | mrelu")->capture_default_str();
  cap_cmd->add_option("--spec", ca.spec, "Classifier spec JSON (overrides n, r, eps, activation)");
  cap_cmd->add_option("--samples", ca.samples, "Monte-Carlo samples")->capture_default_str();
  cap_cmd->add_option("--sphere-samples", ca.sphere_samples, "Sphere points for the bound check")->capture_default_str();

  StatsArgs sa;
  auto* stats_cmd = app.add_subcommand("stats", "Feature histograms, correlations and gradient norms");
  add_common(stats_cmd, sa.common);
  stats_cmd->add_option("--checkpoint", sa.checkpoint, "Model checkpoint")->required();
  stats_cmd->add_option("--layer", sa.layer, "Layer name, e.g. cv2 or fc1")->capture_default_str();
  stats_cmd->add_option("--entry", sa.entry, "Spatial entry (row col); pass none for flat layers")
      ->expected(0, 2)
      ->capture_default_str();
  stats_cmd->add_option("--limit", sa.limit, "Use the first N test images");
  stats_cmd->add_option("--noise-count", sa.noise_count, "Also profile N Gaussian noise images");
  stats_cmd->add_option("--noise-mean", sa.noise_mean, "Noise mean (pixels)")->capture_default_str();
  stats_cmd->add_option("--noise-std", sa.noise_std, "Noise std (pixels)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  auto threads_of = [&]() -> int {
    for (const Common* c : {&ta.common, &aa.common, &ea.common, &ca.common, &sa.common})
      if (c->threads > 0) return c->threads;
    return 0;
  };
  if (const int t = threads_of(); t > 0) omp_set_num_threads(t);

  try {
    if (*train_cmd) return cmd_train(ta, argc, argv);
    if (*attack_cmd) return cmd_attack(aa, argc, argv);
    if (*eval_cmd) return cmd_eval(ea, argc, argv);
    if (*cap_cmd) return cmd_capacity(ca, argc, argv);
    if (*stats_cmd) return cmd_stats(sa, argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::Config: return kExitUsage;
      case ErrorKind::Data:
      case ErrorKind::Dimension: return kExitData;
      case ErrorKind::Numeric: return kExitNumeric;
    }
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
