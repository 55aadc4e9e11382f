#include "hsgnet/checkpoint.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include <fmt/format.h>

namespace hsg {

namespace {

constexpr std::array<char, 4> kMagic{'H', 'S', 'G', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw Error(fmt::format("{}: truncated checkpoint", path.string()));
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::string get_string(std::istream& is, std::uint32_t len, const std::filesystem::path& path) {
  std::string s(len, '\0');
  if (len > 0 && !is.read(s.data(), len)) throw Error(fmt::format("{}: truncated checkpoint", path.string()));
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(fmt::format("cannot write checkpoint {}", path.string()));
  os.write(kMagic.data(), 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(ckpt.manifest.size()));
  os.write(ckpt.manifest.data(), static_cast<std::streamsize>(ckpt.manifest.size()));
  put_u32(os, static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& rec : ckpt.records) {
    put_u32(os, static_cast<std::uint32_t>(rec.name.size()));
    os.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    put_u32(os, static_cast<std::uint32_t>(rec.tensor.rank()));
    for (auto e : rec.tensor.shape()) put_u32(os, static_cast<std::uint32_t>(e));
    for (double v : rec.tensor.data()) {
      const auto f = static_cast<float>(v);
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, 4);
      put_u32(os, bits);
    }
  }
  if (!os) throw Error(fmt::format("failed writing checkpoint {}", path.string()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(fmt::format("checkpoint {} not found", path.string()));
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kMagic) throw Error(fmt::format("{} is not an HSGC checkpoint", path.string()));
  const std::uint32_t version = get_u32(is, path);
  if (version != kVersion) throw Error(fmt::format("{}: unsupported checkpoint version {}", path.string(), version));
  Checkpoint ckpt;
  ckpt.manifest = get_string(is, get_u32(is, path), path);
  const std::uint32_t count = get_u32(is, path);
  for (std::uint32_t r = 0; r < count; ++r) {
    CheckpointRecord rec;
    rec.name = get_string(is, get_u32(is, path), path);
    const std::uint32_t rank = get_u32(is, path);
    Shape shape(rank);
    for (auto& e : shape) e = get_u32(is, path);
    std::vector<double> data(numel(shape));
    for (auto& v : data) {
      const std::uint32_t bits = get_u32(is, path);
      float f = 0.0f;
      std::memcpy(&f, &bits, 4);
      v = static_cast<double>(f);
    }
    rec.tensor = Tensor(std::move(shape), std::move(data));
    ckpt.records.push_back(std::move(rec));
  }
  return ckpt;
}

Checkpoint snapshot(HsgNet& model, std::string manifest) {
  Checkpoint ckpt;
  ckpt.manifest = std::move(manifest);
  for (const auto& p : model.parameters()) ckpt.records.push_back({p.name, p.var->value()});
  for (const auto& [name, t] : model.buffers()) ckpt.records.push_back({name, *t});
  return ckpt;
}

void restore(HsgNet& model, const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& rec : ckpt.records) by_name[rec.name] = &rec.tensor;

  std::vector<std::pair<std::string, Tensor*>> targets;
  for (const auto& p : model.parameters()) targets.emplace_back(p.name, &p.var->mutable_value());
  for (const auto& b : model.buffers()) targets.push_back(b);

  for (const auto& [name, dst] : targets) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(fmt::format("checkpoint has no record for '{}'", name));
    if (it->second->shape() != dst->shape()) {
      throw Error(fmt::format("checkpoint record '{}' has shape {}, model expects {}", name,
                              shape_str(it->second->shape()), shape_str(dst->shape())));
    }
    by_name.erase(it);
  }
  if (!by_name.empty()) throw Error(fmt::format("checkpoint record '{}' has no counterpart in the model", by_name.begin()->first));

  std::map<std::string, const Tensor*> lookup;
  for (const auto& rec : ckpt.records) lookup[rec.name] = &rec.tensor;
  for (const auto& [name, dst] : targets) *dst = *lookup.at(name);
}

}  // namespace hsg
