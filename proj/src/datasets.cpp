#include "saf/datasets.hpp"

#include <cstdio>
#include <fstream>

namespace saf {
namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

Tensor<float> to_tensor(const std::vector<std::uint8_t>& pixels, Shape shape) {
  std::vector<float> data(pixels.begin(), pixels.end());
  return Tensor<float>(std::move(shape), std::move(data));
}

const std::vector<std::string> kMnistNames{"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
const std::vector<std::string> kCifarNames{"airplane", "automobile", "bird",  "cat",  "deer",
                                           "dog",      "frog",       "horse", "ship", "truck"};

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (static_cast<std::size_t>(in.gcount()) != size) throw DataError("short read on " + path.string());
  return bytes;
}

IdxImages parse_idx_images(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  if (bytes.size() < 16) throw DataError(what + ": truncated IDX header (" + std::to_string(bytes.size()) + " bytes)");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != 0x00000803)
    throw DataError(what + ": bad IDX image magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }());
  IdxImages img;
  img.count = read_be32(bytes, 4);
  img.rows = read_be32(bytes, 8);
  img.cols = read_be32(bytes, 12);
  if (img.rows != 28 || img.cols != 28)
    throw DataError(what + ": expected 28x28 images, header declares " + std::to_string(img.rows) + "x" +
                    std::to_string(img.cols));
  const std::size_t payload = img.count * img.rows * img.cols;
  if (bytes.size() != 16 + payload)
    throw DataError(what + ": payload is " + std::to_string(bytes.size() - 16) + " bytes, header implies " +
                    std::to_string(payload));
  img.pixels.assign(bytes.begin() + 16, bytes.end());
  return img;
}

std::vector<int> parse_idx_labels(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  if (bytes.size() < 8) throw DataError(what + ": truncated IDX header (" + std::to_string(bytes.size()) + " bytes)");
  if (read_be32(bytes, 0) != 0x00000801) throw DataError(what + ": bad IDX label magic");
  const std::size_t count = read_be32(bytes, 4);
  if (bytes.size() != 8 + count)
    throw DataError(what + ": payload is " + std::to_string(bytes.size() - 8) + " bytes, header implies " +
                    std::to_string(count));
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    labels[i] = bytes[8 + i];
    if (labels[i] > 9) throw DataError(what + ": label " + std::to_string(labels[i]) + " at index " + std::to_string(i));
  }
  return labels;
}

Dataset load_mnist(const std::filesystem::path& dir) {
  auto images = [&](const char* name) { return parse_idx_images(read_file(dir / name), name); };
  auto labels = [&](const char* name) { return parse_idx_labels(read_file(dir / name), name); };
  const IdxImages train = images("train-images-idx3-ubyte");
  const IdxImages test = images("t10k-images-idx3-ubyte");
  Dataset d;
  d.kind = DatasetKind::Mnist;
  d.train_labels = labels("train-labels-idx1-ubyte");
  d.test_labels = labels("t10k-labels-idx1-ubyte");
  if (d.train_labels.size() != train.count || d.test_labels.size() != test.count)
    throw DataError("mnist: image and label counts disagree");
  d.train_images = to_tensor(train.pixels, {train.count, 1, 28, 28});
  d.test_images = to_tensor(test.pixels, {test.count, 1, 28, 28});
  d.class_names = kMnistNames;
  return d;
}

void parse_cifar_batch(const std::vector<std::uint8_t>& bytes, const std::string& what,
                       std::vector<std::uint8_t>& pixels, std::vector<int>& labels) {
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0)
    throw DataError(what + ": size " + std::to_string(bytes.size()) + " is not a multiple of the " +
                    std::to_string(kCifarRecordBytes) + "-byte record");
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  for (std::size_t r = 0; r < records; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) throw DataError(what + ": label " + std::to_string(rec[0]) + " in record " + std::to_string(r));
    labels.push_back(rec[0]);
    pixels.insert(pixels.end(), rec + 1, rec + kCifarRecordBytes);
  }
}

std::vector<std::uint8_t> serialize_cifar_record(int label, std::span<const float> pixels) {
  if (pixels.size() != kCifarRecordBytes - 1) throw DimensionError("cifar record needs 3072 pixels");
  std::vector<std::uint8_t> out;
  out.reserve(kCifarRecordBytes);
  out.push_back(static_cast<std::uint8_t>(label));
  for (float p : pixels) out.push_back(static_cast<std::uint8_t>(p));
  return out;
}

Dataset load_cifar10(const std::filesystem::path& dir) {
  Dataset d;
  d.kind = DatasetKind::Cifar10;
  std::vector<std::uint8_t> train_px, test_px;
  for (int b = 1; b <= 5; ++b) {
    const std::string name = "data_batch_" + std::to_string(b) + ".bin";
    parse_cifar_batch(read_file(dir / name), name, train_px, d.train_labels);
  }
  parse_cifar_batch(read_file(dir / "test_batch.bin"), "test_batch.bin", test_px, d.test_labels);
  d.train_images = to_tensor(train_px, {d.train_labels.size(), 3, 32, 32});
  d.test_images = to_tensor(test_px, {d.test_labels.size(), 3, 32, 32});
  d.class_names = kCifarNames;
  return d;
}

Dataset load_dataset(DatasetKind kind, const std::filesystem::path& dir) {
  return kind == DatasetKind::Mnist ? load_mnist(dir) : load_cifar10(dir);
}

}  // namespace saf
