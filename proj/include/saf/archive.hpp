#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "saf/perturb.hpp"

namespace saf {

/// Writes one raw little-endian f32 file per sample set plus manifest.jsonl,
/// one line per sample: {"id", "origin", "kind", "beta", "seed", "label", "file", "offset"}.
/// Nonsense samples carry origin "noise:<k>". Existing contents of `dir` with
/// the same names are overwritten.
void write_archive(const std::filesystem::path& dir, const std::vector<SampleSet>& sets);

/// Reads an archive back; DataError on a malformed manifest or short data file.
/// `sample_shape` is the (C, H, W) shape of one image.
std::vector<SampleSet> read_archive(const std::filesystem::path& dir, const Shape& sample_shape);

std::string archive_file_name(PerturbKind kind, double beta);

}  // namespace saf
