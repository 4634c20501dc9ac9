#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "saf/archive.hpp"
#include "saf/checkpoint.hpp"
#include "saf/datasets.hpp"
#include "saf/hash.hpp"
#include "saf/train.hpp"
#include "../support/gradcheck.hpp"

namespace saf {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("saf_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

std::vector<std::uint8_t> idx_images(std::uint32_t count, std::uint32_t rows = 28, std::uint32_t cols = 28) {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x803);
  put_be32(b, count);
  put_be32(b, rows);
  put_be32(b, cols);
  for (std::size_t i = 0; i < count * rows * cols; ++i) b.push_back(static_cast<std::uint8_t>(i * 7 % 256));
  return b;
}

std::vector<std::uint8_t> idx_labels(std::uint32_t count) {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x801);
  put_be32(b, count);
  for (std::uint32_t i = 0; i < count; ++i) b.push_back(static_cast<std::uint8_t>(i % 10));
  return b;
}

void write(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void write_mnist(const fs::path& dir, std::uint32_t train, std::uint32_t test) {
  write(dir / "train-images-idx3-ubyte", idx_images(train));
  write(dir / "train-labels-idx1-ubyte", idx_labels(train));
  write(dir / "t10k-images-idx3-ubyte", idx_images(test));
  write(dir / "t10k-labels-idx1-ubyte", idx_labels(test));
}

std::vector<std::uint8_t> cifar_batch(std::size_t records, std::uint8_t seed) {
  std::vector<std::uint8_t> b;
  for (std::size_t r = 0; r < records; ++r) {
    b.push_back(static_cast<std::uint8_t>((r + seed) % 10));
    for (std::size_t p = 0; p < 3072; ++p) b.push_back(static_cast<std::uint8_t>((p * 13 + r + seed) % 256));
  }
  return b;
}

void write_cifar(const fs::path& dir, std::size_t per_batch) {
  for (int i = 1; i <= 5; ++i) write(dir / ("data_batch_" + std::to_string(i) + ".bin"), cifar_batch(per_batch, i));
  write(dir / "test_batch.bin", cifar_batch(per_batch, 9));
}

TEST(Mnist, LoadsSyntheticFiles) {
  TempDir dir;
  write_mnist(dir.path(), 12, 5);
  const auto d = load_mnist(dir.path());
  EXPECT_EQ(d.train_images.shape(), (Shape{12, 1, 28, 28}));
  EXPECT_EQ(d.test_images.shape(), (Shape{5, 1, 28, 28}));
  EXPECT_EQ(d.train_labels[11], 1);
  EXPECT_EQ(d.train_images.at(0, 0, 0, 3), 21.0f);
  EXPECT_EQ(d.class_names.size(), 10u);
}

TEST(Mnist, FailsClosed) {
  EXPECT_THROW(parse_idx_images({}, "empty"), DataError);
  auto bad_magic = idx_images(2);
  bad_magic[3] = 0x01;
  EXPECT_THROW(parse_idx_images(bad_magic, "magic"), DataError);
  EXPECT_THROW(parse_idx_images(idx_images(2, 32, 32), "geometry"), DataError);
  auto truncated = idx_images(3);
  truncated.pop_back();
  EXPECT_THROW(parse_idx_images(truncated, "truncated"), DataError);
  auto extra = idx_labels(3);
  extra.push_back(0);
  EXPECT_THROW(parse_idx_labels(extra, "long"), DataError);
  auto bad_label = idx_labels(3);
  bad_label.back() = 10;
  EXPECT_THROW(parse_idx_labels(bad_label, "label"), DataError);

  TempDir dir;
  write_mnist(dir.path(), 4, 4);
  write(dir.path() / "t10k-labels-idx1-ubyte", idx_labels(3));
  EXPECT_THROW(load_mnist(dir.path()), DataError);
  write(dir.path() / "t10k-labels-idx1-ubyte", {});
  EXPECT_THROW(load_mnist(dir.path()), DataError);
  fs::remove(dir.path() / "t10k-labels-idx1-ubyte");
  EXPECT_THROW(load_mnist(dir.path()), DataError);
}

TEST(Cifar, LoadsSyntheticBatches) {
  TempDir dir;
  write_cifar(dir.path(), 3);
  const auto d = load_cifar10(dir.path());
  EXPECT_EQ(d.train_images.shape(), (Shape{15, 3, 32, 32}));
  EXPECT_EQ(d.test_images.shape(), (Shape{3, 3, 32, 32}));
  // Channel-planar: red plane first.
  EXPECT_EQ(d.train_images.at(0, 1, 0, 0), static_cast<float>((1024 * 13 + 1) % 256));
  EXPECT_EQ(d.train_labels[0], 1);
}

TEST(Cifar, RecordLengthAndLabels) {
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  auto b = cifar_batch(2, 0);
  b.pop_back();
  EXPECT_THROW(parse_cifar_batch(b, "short", pixels, labels), DataError);
  EXPECT_THROW(parse_cifar_batch({}, "empty", pixels, labels), DataError);
  b = cifar_batch(2, 0);
  b[kCifarRecordBytes] = 11;
  EXPECT_THROW(parse_cifar_batch(b, "label", pixels, labels), DataError);
  EXPECT_EQ(kCifarRecordBytes, 1u + 32 * 32 * 3);
}

TEST(Cifar, FirstRecordRoundTrips) {
  const auto b = cifar_batch(2, 4);
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  parse_cifar_batch(b, "rt", pixels, labels);
  std::vector<float> first(pixels.begin(), pixels.begin() + 3072);
  const auto again = serialize_cifar_record(labels[0], first);
  EXPECT_EQ(again, std::vector<std::uint8_t>(b.begin(), b.begin() + kCifarRecordBytes));
}

TEST(RealData, MnistSizes) {
  const char* dir = std::getenv("SAF_MNIST_DIR");
  if (!dir || !fs::exists(fs::path(dir) / "train-images-idx3-ubyte")) GTEST_SKIP() << "SAF_MNIST_DIR not set";
  const auto d = load_mnist(dir);
  EXPECT_EQ(d.train_images.dim(0), 60000u);
  EXPECT_EQ(d.test_images.dim(0), 10000u);
  double s = 0.0;
  for (float v : d.train_images.data()) s += v;
  const auto m = mean_image(d.train_images);
  double ms = 0.0;
  for (float v : m.data()) ms += v;
  EXPECT_NEAR(ms / m.size(), s / d.train_images.size(), 1e-3);
}

TEST(RealData, CifarSizes) {
  const char* dir = std::getenv("SAF_CIFAR_DIR");
  if (!dir || !fs::exists(fs::path(dir) / "test_batch.bin")) GTEST_SKIP() << "SAF_CIFAR_DIR not set";
  const auto d = load_cifar10(dir);
  EXPECT_EQ(d.train_images.dim(0), 50000u);
  EXPECT_EQ(d.test_images.dim(0), 10000u);
}

Model<float> fresh(DatasetKind ds, Variant v, std::uint64_t seed) {
  Model<float> m(model_spec(ds, v));
  m.initialize(seed);
  // Non-trivial running statistics.
  for (auto& t : m.named_tensors())
    if (t.name.find("running") != std::string::npos)
      for (auto& x : t.value->data()) x += 0.25f;
  return m;
}

CheckpointMeta meta_for(const Model<float>& m) {
  return {m.spec().dataset, m.spec().variant, 7, 42, R"({"epochs":7})"};
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir;
  const auto m = fresh(DatasetKind::Mnist, Variant::MRelu, 3);
  save_checkpoint(m, meta_for(m), dir.path() / "m.saf");
  const auto ck = load_checkpoint(dir.path() / "m.saf");
  EXPECT_EQ(ck.meta.epoch, 7u);
  EXPECT_EQ(ck.meta.seed, 42u);
  EXPECT_EQ(ck.meta.config_json, R"({"epochs":7})");
  EXPECT_EQ(ck.model.spec(), m.spec());
  const auto a = m.named_tensors(), b = ck.model.named_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(*a[i].value, *b[i].value);
  }
  EXPECT_EQ(serialize_checkpoint(ck.model, ck.meta), serialize_checkpoint(m, meta_for(m)));
  Model<float> into(model_spec(DatasetKind::Mnist, Variant::MRelu));
  load_checkpoint_into(into, dir.path() / "m.saf");
  EXPECT_EQ(serialize_checkpoint(into, meta_for(m)), serialize_checkpoint(m, meta_for(m)));
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto m = fresh(DatasetKind::Mnist, Variant::Plain, 4);
  const auto bytes = serialize_checkpoint(m, meta_for(m));
  for (std::size_t pos : {std::size_t{20}, bytes.size() / 2, bytes.size() - 40, bytes.size() - 1}) {
    auto bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x10);
    EXPECT_THROW(parse_checkpoint(bad), DataError) << pos;
  }
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 1)), DataError);
  EXPECT_THROW(parse_checkpoint(""), DataError);
}

TEST(Checkpoint, VersionMismatchIsRefused) {
  const auto m = fresh(DatasetKind::Mnist, Variant::Plain, 5);
  auto bytes = serialize_checkpoint(m, meta_for(m));
  std::string body = bytes.substr(0, bytes.size() - 32);
  body[8] = 2;  // little-endian u32 version after the 8-byte magic
  const auto digest = sha256(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(body.data()), body.size()));
  const std::string resealed = body + std::string(digest.begin(), digest.end());
  try {
    parse_checkpoint(resealed);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, CrossVariantLoadIsRefused) {
  TempDir dir;
  const auto m = fresh(DatasetKind::Mnist, Variant::MRelu, 6);
  save_checkpoint(m, meta_for(m), dir.path() / "m.saf");
  Model<float> cifar(model_spec(DatasetKind::Cifar10, Variant::MRelu));
  EXPECT_THROW(load_checkpoint_into(cifar, dir.path() / "m.saf"), DataError);
  Model<float> plain(model_spec(DatasetKind::Mnist, Variant::Plain));
  EXPECT_THROW(load_checkpoint_into(plain, dir.path() / "m.saf"), DataError);
  Model<float> no_bn(model_spec(DatasetKind::Mnist, Variant::MRelu, {false}));
  EXPECT_THROW(load_checkpoint_into(no_bn, dir.path() / "m.saf"), DataError);
  EXPECT_THROW(load_checkpoint(dir.path() / "missing.saf"), DataError);
}

TEST(Hash, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  TempDir dir;
  write(dir.path() / "f", {'a', 'b', 'c'});
  EXPECT_EQ(sha256_file(dir.path() / "f"), sha256_hex("abc"));
  EXPECT_THROW(sha256_file(dir.path() / "nope"), DataError);
}

std::vector<SampleSet> some_sets() {
  std::vector<SampleSet> sets;
  for (double beta : {0.0, 0.05}) {
    SampleSet s;
    s.kind = PerturbKind::Adversarial;
    s.beta = beta;
    s.seed = 3;
    s.images = testing::random_tensor({3, 1, 28, 28}, 10 + static_cast<int>(beta * 100), 0.0, 255.0).cast<float>();
    s.labels = {4, 0, 9};
    s.origins = {100, 101, 102};
    sets.push_back(s);
  }
  SampleSet n;
  n.kind = PerturbKind::Nonsense;
  n.beta = 0.1;
  n.seed = 5;
  n.images = nonsense_base(2, {1, 28, 28}, 5);
  n.labels = {kNonsense, kNonsense};
  n.origins = {0, 1};
  sets.push_back(n);
  return sets;
}

TEST(Archive, RoundTrip) {
  TempDir dir;
  const auto sets = some_sets();
  write_archive(dir.path(), sets);
  const auto back = read_archive(dir.path(), {1, 28, 28});
  ASSERT_EQ(back.size(), sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    EXPECT_EQ(back[i].kind, sets[i].kind);
    EXPECT_EQ(back[i].beta, sets[i].beta);
    EXPECT_EQ(back[i].seed, sets[i].seed);
    EXPECT_EQ(back[i].images, sets[i].images);
    EXPECT_EQ(back[i].labels, sets[i].labels);
    EXPECT_EQ(back[i].origins, sets[i].origins);
  }
  std::ifstream manifest(dir.path() / "manifest.jsonl");
  std::string line;
  std::size_t lines = 0;
  bool noise_origin = false;
  while (std::getline(manifest, line)) {
    ++lines;
    noise_origin = noise_origin || line.find("\"noise:1\"") != std::string::npos;
  }
  EXPECT_EQ(lines, 8u);
  EXPECT_TRUE(noise_origin);
}

TEST(Archive, ByteIdenticalRewrites) {
  TempDir a, b;
  write_archive(a.path(), some_sets());
  write_archive(b.path(), some_sets());
  for (const auto& entry : fs::directory_iterator(a.path()))
    EXPECT_EQ(sha256_file(entry.path()), sha256_file(b.path() / entry.path().filename())) << entry.path();
}

TEST(Archive, MalformedInputs) {
  TempDir dir;
  EXPECT_THROW(read_archive(dir.path(), {1, 28, 28}), DataError);
  write_archive(dir.path(), some_sets());
  fs::resize_file(dir.path() / archive_file_name(PerturbKind::Nonsense, 0.1), 100);
  EXPECT_THROW(read_archive(dir.path(), {1, 28, 28}), DataError);
  std::ofstream(dir.path() / "manifest.jsonl") << "{\"id\": 0, \"kind\": \"adversarial\"\n";
  EXPECT_THROW(read_archive(dir.path(), {1, 28, 28}), DataError);
}

}  // namespace
}  // namespace saf
