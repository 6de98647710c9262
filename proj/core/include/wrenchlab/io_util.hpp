#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace wrenchlab::io {

// Writes to a sibling temp file and renames over the target so concurrent
// readers never observe a partial file.
void atomic_write(const std::filesystem::path& path, const std::string& data);
void atomic_write(const std::filesystem::path& path, const std::vector<std::uint8_t>& data);

std::string read_text(const std::filesystem::path& path);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

// little-endian binary encoding, explicit about byte order for file formats
class ByteWriter {
 public:
  void u8(std::uint8_t x) { buf_.push_back(x); }
  void u32(std::uint32_t x);
  void u64(std::uint64_t x);
  void i64(std::int64_t x) { u64(static_cast<std::uint64_t>(x)); }
  void f64(double x);
  void bytes(const void* data, std::size_t n);
  const std::vector<std::uint8_t>& data() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

// throws CorruptPayload on overrun
class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t n) : data_(data), size_(n) {}
  explicit ByteReader(const std::vector<std::uint8_t>& v) : ByteReader(v.data(), v.size()) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64();
  void bytes(void* out, std::size_t n);
  std::size_t remaining() const { return size_ - pos_; }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const;
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

// FNV-1a over a byte stream; the content-hash primitive for configs.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n);
  void update_f64(double x);
  void update_u64(std::uint64_t x);
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ull;
};

std::string hex_u64(std::uint64_t x);

}  // namespace wrenchlab::io
