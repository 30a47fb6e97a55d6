#include "insfusion/serialize.hpp"

#include <bit>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace insfusion {

namespace {
constexpr char kMagic[4] = {'I', 'N', 'S', 'F'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open file: " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return data;
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open file for writing: " + path);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw FormatError("write failed: " + path);
}

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  auto [it, inserted] = params_.emplace(name, std::move(t));
  if (!inserted) throw ConfigError("duplicate parameter name: " + name);
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [k, v] : params_) out.push_back(k);
  return out;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : params_) {
    if (k.rfind(prefix, 0) == 0) out.push_back(k);
  }
  return out;
}

Index ParamStore::total_numel() const {
  Index n = 0;
  for (const auto& [k, v] : params_) n += v.numel();
  return n;
}

std::uint64_t ParamStore::hash_prefix(const std::string& prefix) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : params_) {
    if (k.rfind(prefix, 0) != 0) continue;
    h = fnv1a(k.data(), k.size(), h);
    h = fnv1a(v.data(), static_cast<std::size_t>(v.numel()) * sizeof(double), h);
  }
  return h;
}

void write_checkpoint(const std::string& path, const ParamStore& store) {
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u64(store.size());
  for (const auto& [name, t] : store.map()) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) w.i64(d);
    w.bytes(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(double));
  }
  write_file(path, w.buffer());
}

std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
  const std::string data = read_file(path);
  ByteReader r(data.data(), data.size());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic in " + path);
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError("checkpoint version mismatch in " + path + ": expected " +
                      std::to_string(kVersion) + ", got " + std::to_string(version));
  }
  const std::uint64_t count = r.u64();
  std::map<std::string, Tensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.i64();
    Tensor t(shape);
    r.bytes(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(double));
    out.emplace(name, std::move(t));
  }
  return out;
}

std::size_t assign_params(ParamStore& store, const std::map<std::string, Tensor>& src) {
  std::size_t assigned = 0;
  for (auto& [name, t] : store.map()) {
    auto it = src.find(name);
    if (it == src.end()) continue;
    if (it->second.shape() != t.shape()) {
      throw FormatError("checkpoint shape mismatch for " + name + ": expected " +
                        shape_str(t.shape()) + ", got " + shape_str(it->second.shape()));
    }
    t.vec() = it->second.vec();
    ++assigned;
  }
  return assigned;
}

}  // namespace insfusion
