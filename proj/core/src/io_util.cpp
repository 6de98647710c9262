#include "wrenchlab/io_util.hpp"

#include <unistd.h>

#include <atomic>
#include <cstring>
#include <fstream>
#include <sstream>

#include "wrenchlab/errors.hpp"

namespace wrenchlab::io {

namespace fs = std::filesystem;

namespace {

fs::path temp_sibling(const fs::path& path) {
  static std::atomic<unsigned> counter{0};
  std::ostringstream name;
  name << "." << path.filename().string() << ".tmp." << ::getpid() << "."
       << counter.fetch_add(1);
  return path.parent_path() / name.str();
}

void write_then_rename(const fs::path& path, const void* data, std::size_t n) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for write: " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    out.flush();
    if (!out) {
      fs::remove(tmp);
      throw Error("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error("rename failed: " + path.string() + " (" + ec.message() + ")");
  }
}

}  // namespace

void atomic_write(const fs::path& path, const std::string& data) {
  write_then_rename(path, data.data(), data.size());
}

void atomic_write(const fs::path& path, const std::vector<std::uint8_t>& data) {
  write_then_rename(path, data.data(), data.size());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for read: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error("cannot open for read: " + path.string());
  const auto n = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (!in) throw Error("read failed: " + path.string());
  return buf;
}

void ByteWriter::u32(std::uint32_t x) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t x) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

void ByteWriter::f64(double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  u64(bits);
}

void ByteWriter::bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  buf_.insert(buf_.end(), p, p + n);
}

void ByteReader::need(std::size_t n) const {
  if (pos_ + n > size_) throw CorruptPayload("truncated payload");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
  pos_ += 4;
  return x;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
  pos_ += 8;
  return x;
}

double ByteReader::f64() {
  const std::uint64_t bits = u64();
  double x;
  std::memcpy(&x, &bits, sizeof x);
  return x;
}

void ByteReader::bytes(void* out, std::size_t n) {
  need(n);
  std::memcpy(out, data_ + pos_, n);
  pos_ += n;
}

void Fnv1a::update(const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    state_ ^= p[i];
    state_ *= 0x100000001b3ull;
  }
}

void Fnv1a::update_f64(double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  update_u64(bits);
}

void Fnv1a::update_u64(std::uint64_t x) {
  // little-endian byte order regardless of host
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(x >> (8 * i));
  update(b, 8);
}

std::string Fnv1a::hex() const { return hex_u64(state_); }

std::string hex_u64(std::uint64_t x) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[x & 0xf];
    x >>= 4;
  }
  return s;
}

}  // namespace wrenchlab::io
