#pragma once

// Checkpoint layout (little-endian):
//   "CMCGNSCK"  8-byte magic
//   u32         format version
//   u64         completed steps
//   u32         stage
//   u64         config hash (CRC-64 of the canonical config JSON)
//   string      config JSON (u32 length + bytes)
//   u32         tensor count
//   per tensor: string name, u32 rows, u32 cols, rows*cols f64 row-major
//   u64         CRC-64/XZ of every preceding byte

#include <filesystem>
#include <map>
#include <string>

#include "cmcgns/binary_io.hpp"
#include "cmcgns/common.hpp"

namespace cmcgns {

inline constexpr char kCheckpointMagic[8] = {'C', 'M', 'C', 'G', 'N', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  std::uint64_t step = 0;
  std::uint32_t stage = 1;
  std::uint64_t config_hash = 0;
  std::string config_json;
  std::vector<std::pair<std::string, Matrix>> tensors;  // ordered

  const Matrix& tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw ConfigError("checkpoint has no tensor '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.first == name) return true;
    return false;
  }
};

inline std::vector<std::uint8_t> serialize(const Checkpoint& c) {
  ByteWriter w;
  for (char ch : kCheckpointMagic) w.put<char>(ch);
  w.put<std::uint32_t>(c.format_version);
  w.put<std::uint64_t>(c.step);
  w.put<std::uint32_t>(c.stage);
  w.put<std::uint64_t>(c.config_hash);
  w.put_string(c.config_json);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, m] : c.tensors) {
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) w.put<double>(m(i, j));
  }
  w.put<std::uint64_t>(crc64(w.bytes()));
  return std::move(w.bytes());
}

inline Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) + 8) throw ChecksumMismatch("checkpoint truncated");
  const auto body = bytes.first(bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw ConfigError("not a checkpoint file (bad magic)");
  ByteReader r(body, "checkpoint");
  for (std::size_t i = 0; i < sizeof(kCheckpointMagic); ++i) r.get<char>();
  Checkpoint c;
  c.format_version = r.get<std::uint32_t>();
  if (c.format_version != kCheckpointVersion)
    throw VersionMismatch("checkpoint version " + std::to_string(c.format_version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  if (crc64(body) != stored) throw ChecksumMismatch("checkpoint CRC64 mismatch");
  c.step = r.get<std::uint64_t>();
  c.stage = r.get<std::uint32_t>();
  c.config_hash = r.get<std::uint64_t>();
  c.config_json = r.get_string();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t t = 0; t < n; ++t) {
    std::string name = r.get_string();
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    Matrix m(rows, cols);
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = r.get<double>();
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (r.remaining() != 0) throw ChecksumMismatch("checkpoint has trailing bytes");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file(path, serialize(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace cmcgns
