#pragma once

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "insfusion/tensor.hpp"

namespace insfusion {

// Little-endian byte buffer helpers shared by the checkpoint and dataset
// formats.
class ByteWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void bytes(const void* p, std::size_t n) { raw(p, n); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  const std::string& buffer() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

 private:
  void raw(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const void* data, std::size_t size)
      : p_(static_cast<const char*>(data)), size_(size) {}

  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int64_t i64() { return get<std::int64_t>(); }
  double f64() { return get<double>(); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(p_ + off_, n);
    off_ += n;
    return s;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, p_ + off_, n);
    off_ += n;
  }
  std::size_t offset() const { return off_; }
  std::size_t remaining() const { return size_ - off_; }

 private:
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_ + off_, sizeof(T));
    off_ += sizeof(T);
    return v;
  }
  void need(std::size_t n) {
    if (off_ + n > size_) {
      throw FormatError("truncated data at offset " + std::to_string(off_) + ": expected " +
                        std::to_string(n) + " more bytes, have " + std::to_string(size_ - off_));
    }
  }
  const char* p_;
  std::size_t size_;
  std::size_t off_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& data);

// Named parameter registry. Names are dot-separated namespaces
// (e.g. "refine.layer0.self.wq"); iteration is name-ordered.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  std::vector<std::string> names() const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;
  std::size_t size() const { return params_.size(); }
  Index total_numel() const;

  // FNV-1a over the raw value bytes of every parameter under `prefix`,
  // in name order.
  std::uint64_t hash_prefix(const std::string& prefix) const;

  std::map<std::string, Tensor>& map() { return params_; }
  const std::map<std::string, Tensor>& map() const { return params_; }

 private:
  std::map<std::string, Tensor> params_;
};

// Flat binary checkpoint: magic "INSF", version u32, count u64, then one
// record per parameter (name, rank u32, dims i64, f64 payload). Bit-exact
// round trip.
void write_checkpoint(const std::string& path, const ParamStore& store);
std::map<std::string, Tensor> read_checkpoint(const std::string& path);

// Copies values from `src` into matching names of `store`; shape mismatch is
// an error. Returns the number of parameters assigned.
std::size_t assign_params(ParamStore& store, const std::map<std::string, Tensor>& src);

}  // namespace insfusion
