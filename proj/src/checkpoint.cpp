#include "gfcn/checkpoint.hpp"

#include <algorithm>
#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <fcntl.h>
#include <unistd.h>

namespace gfcn {

namespace detail {

void copy_le(const void* src, std::size_t elem_size, std::size_t count, std::uint8_t* dst) {
  std::memcpy(dst, src, elem_size * count);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < count; ++i) std::reverse(dst + i * elem_size, dst + (i + 1) * elem_size);
  }
}

void read_le(const std::uint8_t* src, std::size_t elem_size, std::size_t count, void* dst) {
  std::memcpy(dst, src, elem_size * count);
  if constexpr (std::endian::native == std::endian::big) {
    auto* d = static_cast<std::uint8_t*>(dst);
    for (std::size_t i = 0; i < count; ++i) std::reverse(d + i * elem_size, d + (i + 1) * elem_size);
  }
}

}  // namespace detail

namespace {

constexpr char kMagic[4] = {'G', 'F', 'C', 'N'};

std::size_t elem_size(DType t) {
  switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::i64: return 8;
    case DType::u8: return 1;
  }
  return 0;
}

class Writer {
 public:
  template <typename T>
  void scalar(T v) {
    std::uint8_t buf[sizeof(T)];
    detail::copy_le(&v, sizeof(T), 1, buf);
    bytes.insert(bytes.end(), buf, buf + sizeof(T));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T scalar(const std::string& field) {
    T v;
    detail::read_le(take(sizeof(T), field), sizeof(T), 1, &v);
    return v;
  }
  const std::uint8_t* take(std::size_t n, const std::string& field) {
    if (n > size_ - pos_) throw CorruptionError(field, "file is truncated");
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

const Checkpoint::Record* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records_)
    if (r.name == name) return &r;
  return nullptr;
}

const Checkpoint::Record& Checkpoint::require(const std::string& name, DType type) const {
  const Record* r = find(name);
  if (!r) throw CorruptionError(name, "record is missing");
  if (r->type != type) throw CorruptionError(name, "record has an unexpected element type");
  return *r;
}

void Checkpoint::put(Record r) {
  for (auto& existing : records_) {
    if (existing.name == r.name) {
      existing = std::move(r);
      return;
    }
  }
  records_.push_back(std::move(r));
}

void Checkpoint::put_i64(const std::string& name, std::int64_t value) {
  Record r{name, DType::i64, {}, std::vector<std::uint8_t>(8)};
  detail::copy_le(&value, 8, 1, r.payload.data());
  put(std::move(r));
}

void Checkpoint::put_text(const std::string& name, const std::string& text) {
  put({name, DType::u8, {static_cast<std::uint64_t>(text.size())}, std::vector<std::uint8_t>(text.begin(), text.end())});
}

std::int64_t Checkpoint::i64(const std::string& name) const {
  const Record& r = require(name, DType::i64);
  if (r.payload.size() != 8) throw CorruptionError(name, "payload size does not match dims");
  std::int64_t v;
  detail::read_le(r.payload.data(), 8, 1, &v);
  return v;
}

std::string Checkpoint::text(const std::string& name) const {
  const Record& r = require(name, DType::u8);
  return std::string(r.payload.begin(), r.payload.end());
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  Writer w;
  w.raw(kMagic, 4);
  w.scalar<std::uint32_t>(kVersion);
  w.scalar<std::uint64_t>(records_.size());
  for (const auto& r : records_) {
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(r.name.size()));
    w.raw(r.name.data(), r.name.size());
    w.scalar<std::uint8_t>(static_cast<std::uint8_t>(r.type));
    w.scalar<std::uint8_t>(static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) w.scalar<std::uint64_t>(d);
    w.raw(r.payload.data(), r.payload.size());
  }
  w.scalar<std::uint32_t>(crc_of(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

Checkpoint Checkpoint::parse(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CorruptionError("magic", "not a GFCN checkpoint");
  if (bytes.size() < 4 + 4 + 8 + 4) throw CorruptionError("truncated", "file is shorter than the fixed header");
  Reader r(bytes.data(), bytes.size() - 4);
  r.take(4, "magic");
  const auto version = r.scalar<std::uint32_t>("version");
  if (version != kVersion) {
    throw CorruptionError("version", "unsupported version " + std::to_string(version) + " (expected " + std::to_string(kVersion) + ")");
  }
  std::uint32_t stored_crc;
  detail::read_le(bytes.data() + bytes.size() - 4, 4, 1, &stored_crc);
  if (stored_crc != crc_of(bytes.data(), bytes.size() - 4)) throw CorruptionError("crc", "checksum mismatch");

  Checkpoint ckpt;
  const auto count = r.scalar<std::uint64_t>("record count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string at = "record[" + std::to_string(i) + "]";
    Record rec;
    const auto name_len = r.scalar<std::uint32_t>(at + ".name");
    const auto* name = r.take(name_len, at + ".name");
    rec.name.assign(reinterpret_cast<const char*>(name), name_len);
    const auto type = r.scalar<std::uint8_t>(at + ".type");
    if (type < 1 || type > 4) throw CorruptionError(at + ".type", "unknown element type " + std::to_string(type));
    rec.type = static_cast<DType>(type);
    const auto rank = r.scalar<std::uint8_t>(at + ".rank");
    std::uint64_t numel = 1;
    for (int k = 0; k < rank; ++k) {
      rec.dims.push_back(r.scalar<std::uint64_t>(at + ".dims"));
      numel *= rec.dims.back();
    }
    const std::uint64_t nbytes = numel * elem_size(rec.type);
    if (nbytes > r.remaining()) throw CorruptionError(at + ".payload", "file is truncated");
    const auto* payload = r.take(nbytes, at + ".payload");
    rec.payload.assign(payload, payload + nbytes);
    ckpt.records_.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw CorruptionError("trailer", "unexpected bytes after the last record");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = ckpt.serialize();
  const auto tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw std::runtime_error(tmp + ": cannot open for writing");
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n <= 0) {
      ::close(fd);
      std::remove(tmp.c_str());
      throw std::runtime_error(tmp + ": write failed");
    }
    done += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Checkpoint::parse(bytes);
}

}  // namespace gfcn
