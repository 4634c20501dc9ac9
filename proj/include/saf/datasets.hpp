#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "saf/model.hpp"
#include "saf/tensor.hpp"

namespace saf {

/// Images are stored in pixel units [0, 255], (N, C, H, W), channel-planar.
struct Dataset {
  DatasetKind kind = DatasetKind::Mnist;
  Tensor<float> train_images, test_images;
  std::vector<int> train_labels, test_labels;
  std::vector<std::string> class_names;
};

/// Reads train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte
/// and t10k-labels-idx1-ubyte. Throws DataError on any malformed or truncated file.
Dataset load_mnist(const std::filesystem::path& dir);

/// Reads data_batch_1..5.bin and test_batch.bin (3073-byte records).
Dataset load_cifar10(const std::filesystem::path& dir);

Dataset load_dataset(DatasetKind kind, const std::filesystem::path& dir);

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

IdxImages parse_idx_images(const std::vector<std::uint8_t>& bytes, const std::string& what);
std::vector<int> parse_idx_labels(const std::vector<std::uint8_t>& bytes, const std::string& what);

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// Appends the records of one CIFAR-10 batch file image by image.
void parse_cifar_batch(const std::vector<std::uint8_t>& bytes, const std::string& what,
                       std::vector<std::uint8_t>& pixels, std::vector<int>& labels);

/// Inverse of parse_cifar_batch for one record.
std::vector<std::uint8_t> serialize_cifar_record(int label, std::span<const float> pixels);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace saf
