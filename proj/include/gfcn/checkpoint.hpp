#pragma once

#include <cstdint>
#include <span>
#include <type_traits>
#include <filesystem>
#include <string>
#include <vector>

#include "gfcn/tensor.hpp"

namespace gfcn {

/// Element type tags of checkpoint records.
enum class DType : std::uint8_t { f32 = 1, f64 = 2, i64 = 3, u8 = 4 };

/// Named-record container written as:
///   "GFCN" | u32 version | u64 record count |
///   per record: u32 name length, name, u8 type, u8 rank, rank x u64 dims, payload |
///   u32 CRC32 of every preceding byte.
/// All integers and payloads are little-endian.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  struct Record {
    std::string name;
    DType type = DType::f32;
    std::vector<std::uint64_t> dims;
    std::vector<std::uint8_t> payload;
  };

  template <typename Scalar>
  void put_tensor(const std::string& name, const Tensor<Scalar>& t);
  void put_i64(const std::string& name, std::int64_t value);
  void put_text(const std::string& name, const std::string& text);

  bool contains(const std::string& name) const { return find(name) != nullptr; }
  /// Throws CorruptionError naming the record when missing or of another type.
  template <typename Scalar>
  Tensor<Scalar> tensor(const std::string& name) const;
  std::int64_t i64(const std::string& name) const;
  std::string text(const std::string& name) const;

  const std::vector<Record>& records() const { return records_; }

  std::vector<std::uint8_t> serialize() const;
  /// Throws CorruptionError naming the failing field: "magic", "version", "crc",
  /// "truncated", or "record[i].<part>".
  static Checkpoint parse(const std::vector<std::uint8_t>& bytes);

 private:
  const Record* find(const std::string& name) const;
  const Record& require(const std::string& name, DType type) const;
  void put(Record r);

  std::vector<Record> records_;
};

/// Writes to a temporary sibling, flushes it to disk, then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

namespace detail {
template <typename Scalar>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
  return std::is_same_v<Scalar, float> ? DType::f32 : DType::f64;
}
void copy_le(const void* src, std::size_t elem_size, std::size_t count, std::uint8_t* dst);
void read_le(const std::uint8_t* src, std::size_t elem_size, std::size_t count, void* dst);
}  // namespace detail

template <typename Scalar>
void Checkpoint::put_tensor(const std::string& name, const Tensor<Scalar>& t) {
  Record r{name, detail::dtype_of<Scalar>(), {}, {}};
  for (Index d : t.shape().dims()) r.dims.push_back(static_cast<std::uint64_t>(d));
  r.payload.resize(static_cast<std::size_t>(t.size()) * sizeof(Scalar));
  detail::copy_le(t.data(), sizeof(Scalar), static_cast<std::size_t>(t.size()), r.payload.data());
  put(std::move(r));
}

template <typename Scalar>
Tensor<Scalar> Checkpoint::tensor(const std::string& name) const {
  const Record& r = require(name, detail::dtype_of<Scalar>());
  std::vector<Index> dims;
  for (auto d : r.dims) dims.push_back(static_cast<Index>(d));
  Shape shape;
  try {
    shape = Shape(std::span<const Index>(dims));
  } catch (const std::exception& e) {
    throw CorruptionError(name, std::string("bad dims: ") + e.what());
  }
  Tensor<Scalar> t(shape);
  if (r.payload.size() != static_cast<std::size_t>(t.size()) * sizeof(Scalar)) throw CorruptionError(name, "payload size does not match dims");
  detail::read_le(r.payload.data(), sizeof(Scalar), static_cast<std::size_t>(t.size()), t.data());
  return t;
}

}  // namespace gfcn
