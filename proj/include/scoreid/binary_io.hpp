#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scoreid {

/// Little-endian byte sink for the versioned model/feature/transform files.
class BinaryWriter {
 public:
  void magic(std::string_view tag);  // exactly 8 bytes
  void u32(std::uint32_t v);
  void f64(double v);
  void f64s(std::span<const double> v);
  void str(std::string_view s);  // u32 length + bytes

  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::vector<std::uint8_t> bytes, std::string origin = "<memory>");
  static BinaryReader open(const std::filesystem::path& path);

  void expect_magic(std::string_view tag);
  std::uint32_t u32();
  double f64();
  std::vector<double> f64s(std::size_t n);
  std::string str();
  bool at_end() const noexcept { return pos_ == buf_.size(); }
  const std::string& origin() const noexcept { return origin_; }

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::string origin_;
};

/// 64-bit FNV-1a; stable across platforms, used for configuration digests.
std::uint64_t fnv1a(std::string_view text);
std::string hex64(std::uint64_t v);

}  // namespace scoreid
