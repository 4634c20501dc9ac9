#include "saf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "saf/hash.hpp"

namespace saf {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'A', 'F', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint8_t kDtypeF32 = 0;

template <class U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class U>
  U get() {
    U v;
    std::memcpy(&v, take(sizeof(U)), sizeof(U));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw DataError("checkpoint: truncated at byte " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Model<float>& model, const CheckpointMeta& meta) {
  nlohmann::json header = {{"dataset", meta.dataset}, {"variant", meta.variant}, {"epoch", meta.epoch},
                           {"seed", meta.seed}, {"config", nlohmann::json::parse(meta.config_json)},
                           {"spec", nlohmann::json::parse(spec_to_json(model.spec()))}};
  const std::string h = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, h.size());
  out += h;
  const auto tensors = model.named_tensors();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint8_t>(out, kDtypeF32);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value->rank()));
    for (std::size_t d : t.value->shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.value->raw()), t.value->size() * sizeof(float));
  }
  const Digest digest = sha256({reinterpret_cast<const unsigned char*>(out.data()), out.size()});
  out.append(reinterpret_cast<const char*>(digest.data()), digest.size());
  return out;
}

void save_checkpoint(const Model<float>& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(model, meta);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint parse_checkpoint(const std::string& bytes) {
  constexpr std::size_t kDigest = 32;
  if (bytes.size() < sizeof kMagic + kDigest) throw DataError("checkpoint: file too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw DataError("checkpoint: bad magic");
  const std::string_view body(bytes.data(), bytes.size() - kDigest);
  const Digest digest = sha256({reinterpret_cast<const unsigned char*>(body.data()), body.size()});
  if (std::memcmp(digest.data(), bytes.data() + body.size(), kDigest) != 0)
    throw DataError("checkpoint: integrity hash mismatch (file corrupted)");

  Reader r(body);
  r.take(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  const auto hlen = r.get<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(std::string_view(r.take(hlen), hlen));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what());
  }
  CheckpointMeta meta;
  meta.dataset = header.value("dataset", "");
  meta.variant = header.value("variant", "");
  meta.epoch = header.value("epoch", std::size_t{0});
  meta.seed = header.value("seed", std::uint64_t{0});
  meta.config_json = header.contains("config") ? header["config"].dump() : "{}";
  Model<float> model(spec_from_json(header.at("spec").dump()));

  auto tensors = model.named_tensors();
  const auto count = r.get<std::uint32_t>();
  if (count != tensors.size())
    throw DataError("checkpoint: holds " + std::to_string(count) + " tensors, model expects " +
                    std::to_string(tensors.size()));
  for (auto& t : tensors) {
    const auto nlen = r.get<std::uint32_t>();
    const std::string name(r.take(nlen), nlen);
    if (name != t.name) throw DataError("checkpoint: expected tensor " + t.name + ", found " + name);
    if (r.get<std::uint8_t>() != kDtypeF32) throw DataError("checkpoint: unsupported dtype for " + name);
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != t.value->shape())
      throw DataError("checkpoint: " + name + " has shape " + shape_string(shape) + ", model expects " +
                      shape_string(t.value->shape()));
    std::memcpy(t.value->raw(), r.take(t.value->size() * sizeof(float)), t.value->size() * sizeof(float));
  }
  if (r.pos() != body.size()) throw DataError("checkpoint: trailing bytes after tensor table");
  return {std::move(model), std::move(meta)};
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

CheckpointMeta load_checkpoint_into(Model<float>& model, const std::filesystem::path& path) {
  LoadedCheckpoint ck = load_checkpoint(path);
  if (ck.meta.dataset != model.spec().dataset || ck.meta.variant != model.spec().variant)
    throw DataError("checkpoint " + path.string() + " is for " + ck.meta.dataset + "/" + ck.meta.variant +
                    ", model is " + model.spec().dataset + "/" + model.spec().variant);
  if (!(ck.model.spec() == model.spec()))
    throw DataError("checkpoint " + path.string() + ": architecture differs from the model");
  model = std::move(ck.model);
  return ck.meta;
}

}  // namespace saf
