#include "scoreid/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "scoreid/error.hpp"

namespace scoreid {

void BinaryWriter::magic(std::string_view tag) {
  require(tag.size() == 8, ErrorKind::Argument, "magic tags are 8 bytes");
  buf_.insert(buf_.end(), tag.begin(), tag.end());
}

void BinaryWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BinaryWriter::f64(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void BinaryWriter::f64s(std::span<const double> v) {
  for (double x : v) f64(x);
}

void BinaryWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void BinaryWriter::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

BinaryReader::BinaryReader(std::vector<std::uint8_t> bytes, std::string origin)
    : buf_(std::move(bytes)), origin_(std::move(origin)) {}

BinaryReader BinaryReader::open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return BinaryReader(std::move(bytes), path.string());
}

void BinaryReader::need(std::size_t n) const {
  if (buf_.size() - pos_ < n) fail(ErrorKind::Format, "truncated file: " + origin_);
}

void BinaryReader::expect_magic(std::string_view tag) {
  need(8);
  if (std::memcmp(buf_.data() + pos_, tag.data(), 8) != 0)
    fail(ErrorKind::Format, "bad magic in " + origin_);
  pos_ += 8;
}

std::uint32_t BinaryReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{buf_[pos_ + i]} << (8 * i);
  pos_ += 4;
  return v;
}

double BinaryReader::f64() {
  need(8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t{buf_[pos_ + i]} << (8 * i);
  pos_ += 8;
  return std::bit_cast<double>(bits);
}

std::vector<double> BinaryReader::f64s(std::size_t n) {
  need(n * 8);
  std::vector<double> v(n);
  for (auto& x : v) x = f64();
  return v;
}

std::string BinaryReader::str() {
  const auto n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace scoreid
