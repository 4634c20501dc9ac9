#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <array>

namespace saf {

using Digest = std::array<unsigned char, 32>;

Digest sha256(std::span<const unsigned char> bytes);
std::string to_hex(const Digest& digest);
std::string sha256_hex(std::string_view bytes);
/// Hex SHA-256 of a file's contents; DataError if unreadable.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace saf
