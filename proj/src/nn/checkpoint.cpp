#include "ecgdk/nn/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "ecgdk/common.h"

namespace ecgdk::nn {

namespace {

constexpr char kMagic[8] = {'E', 'C', 'G', 'D', 'K', 'C', 'K', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ContractError("checkpoint: truncated " + what);
  return v;
}

std::string get_string(std::istream& in, std::size_t len, const std::string& what) {
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), static_cast<std::streamsize>(len)))
    throw ContractError("checkpoint: truncated " + what);
  return s;
}

}  // namespace

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw ContractError("checkpoint: no entry named " + name);
}

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& manifest,
                     std::span<const NamedParam> params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContractError("checkpoint: cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string text = manifest.dump();
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) put<std::uint64_t>(out, d);
    for (double v : p.tensor.values()) put<float>(out, static_cast<float>(v));
  }
  if (!out) throw ContractError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("checkpoint: cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw ContractError("checkpoint: " + path.string() + " is not an ecgdk checkpoint");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw ContractError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  const auto manifest_len = get<std::uint64_t>(in, "manifest length");
  ckpt.manifest = nlohmann::json::parse(get_string(in, manifest_len, "manifest"));
  const auto count = get<std::uint32_t>(in, "entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = get_string(in, get<std::uint32_t>(in, "name length"), "name");
    const auto rank = get<std::uint32_t>(in, "rank");
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(get<std::uint64_t>(in, "dims"));
    e.values.resize(shape_numel(e.shape));
    if (!e.values.empty() &&
        !in.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * sizeof(float))))
      throw ContractError("checkpoint: truncated values of " + e.name);
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

void assign_params(const Checkpoint& ckpt, std::span<NamedParam> params) {
  if (ckpt.entries.size() != params.size())
    throw ContractError("checkpoint: " + std::to_string(ckpt.entries.size()) + " entries for " +
                        std::to_string(params.size()) + " parameters");
  for (auto& p : params) {
    const CheckpointEntry& e = ckpt.entry(p.name);
    if (e.shape != p.tensor.shape())
      throw ContractError("checkpoint: " + p.name + " has shape " + shape_string(e.shape) + ", expected " +
                          shape_string(p.tensor.shape()));
    auto dst = p.tensor.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(e.values[i]);
  }
}

void round_to_float32(std::span<double> values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace ecgdk::nn
