#include "saf/archive.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <map>

#include "json.hpp"

namespace saf {

static_assert(std::endian::native == std::endian::little, "archive IO assumes a little-endian host");

std::string archive_file_name(PerturbKind kind, double beta) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, beta);
  return to_string(kind) + "_b" + std::string(buf, res.ptr) + ".f32";
}

void write_archive(const std::filesystem::path& dir, const std::vector<SampleSet>& sets) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw DataError("cannot write " + (dir / "manifest.jsonl").string());
  std::size_t id = 0;
  for (const auto& set : sets) {
    const std::string file = archive_file_name(set.kind, set.beta);
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / file).string());
    out.write(reinterpret_cast<const char*>(set.images.raw()),
              static_cast<std::streamsize>(set.images.size() * sizeof(float)));
    const std::size_t n = set.labels.size();
    const std::size_t bytes = n ? set.images.size() * sizeof(float) / n : 0;
    for (std::size_t i = 0; i < n; ++i) {
      nlohmann::json line;
      line["id"] = id++;
      line["origin"] = set.kind == PerturbKind::Nonsense ? nlohmann::json("noise:" + std::to_string(set.origins[i]))
                                                         : nlohmann::json(set.origins[i]);
      line["kind"] = to_string(set.kind);
      line["beta"] = set.beta;
      line["seed"] = set.seed;
      line["label"] = set.labels[i] == kNonsense ? nlohmann::json("nonsense") : nlohmann::json(set.labels[i]);
      line["file"] = file;
      line["offset"] = i * bytes;
      manifest << line.dump() << '\n';
    }
  }
}

std::vector<SampleSet> read_archive(const std::filesystem::path& dir, const Shape& sample_shape) {
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw DataError("no manifest.jsonl in " + dir.string());
  const std::size_t per = shape_product(sample_shape);
  std::vector<SampleSet> sets;
  std::map<std::string, std::size_t> by_file;
  std::map<std::string, std::vector<std::size_t>> offsets;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      const std::string file = j.at("file").get<std::string>();
      auto [it, fresh] = by_file.try_emplace(file, sets.size());
      if (fresh) {
        SampleSet s;
        s.kind = perturb_kind_from_string(j.at("kind").get<std::string>());
        s.beta = j.at("beta").get<double>();
        s.seed = j.at("seed").get<std::uint64_t>();
        sets.push_back(std::move(s));
      }
      SampleSet& s = sets[it->second];
      const auto& label = j.at("label");
      s.labels.push_back(label.is_string() ? kNonsense : label.get<int>());
      const auto& origin = j.at("origin");
      s.origins.push_back(origin.is_string() ? std::stoll(origin.get<std::string>().substr(6)) : origin.get<std::int64_t>());
      offsets[file].push_back(j.at("offset").get<std::size_t>());
    } catch (const std::exception& e) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (auto& [file, index] : by_file) {
    SampleSet& s = sets[index];
    const std::size_t n = s.labels.size();
    Shape shape{n};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    s.images = Tensor<float>(shape);
    std::ifstream in(dir / file, std::ios::binary);
    if (!in) throw DataError("missing archive file " + (dir / file).string());
    for (std::size_t i = 0; i < n; ++i) {
      in.seekg(static_cast<std::streamoff>(offsets[file][i]));
      in.read(reinterpret_cast<char*>(s.images.raw() + i * per), static_cast<std::streamsize>(per * sizeof(float)));
      if (static_cast<std::size_t>(in.gcount()) != per * sizeof(float))
        throw DataError("archive file " + file + " is short at sample " + std::to_string(i));
    }
  }
  return sets;
}

}  // namespace saf
