// SPDX-License-Identifier: Apache-2.0
#include "fg3d/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "fg3d/error.hpp"

namespace fg3d {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'F', 'G', 'P', 'V'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <typename T>
  T get() {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    if (n > (std::uint64_t{1} << 32)) throw DataError(source_ + ": implausible string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  void read(char* dst, std::size_t n) {
    if (!in_.read(dst, static_cast<std::streamsize>(n))) throw DataError(source_ + ": truncated checkpoint");
  }

 private:
  std::istream& in_;
  std::string source_;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put_string(out, ckpt.config_text);
    put_string(out, ckpt.rng_state);
    put_string(out, ckpt.metadata);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, rec] : ckpt.tensors) {
      put_string(out, name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.dims.size()));
      std::size_t n = 1;
      for (auto d : rec.dims) {
        put<std::uint64_t>(out, d);
        n *= d;
      }
      if (n != rec.values.size()) throw ContractError("checkpoint tensor '" + name + "' size mismatch");
      for (double v : rec.values) put<float>(out, static_cast<float>(v));
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError(path.string() + ": not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  Checkpoint ckpt;
  ckpt.config_text = r.get_string();
  ckpt.rng_state = r.get_string();
  ckpt.metadata = r.get_string();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.get_string();
    TensorRecord rec;
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw DataError(path.string() + ": implausible rank for '" + name + "'");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      rec.dims.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
      n *= rec.dims.back();
    }
    if (n > (std::size_t{1} << 31)) throw DataError(path.string() + ": implausible size for '" + name + "'");
    rec.values.resize(n);
    for (auto& v : rec.values) v = static_cast<double>(r.get<float>());
    ckpt.tensors.emplace(name, std::move(rec));
  }
  return ckpt;
}

}  // namespace fg3d
