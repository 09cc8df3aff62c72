#include "scoreid/image_io.hpp"

#include <png.h>

#include <array>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "scoreid/error.hpp"

namespace scoreid {
namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::Io, "read failed: " + path.string());
  return bytes;
}

std::uint8_t luminance(double r, double g, double b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<std::uint8_t>(std::clamp(std::lround(y), 0L, 255L));
}

GrayImage decode_png(const std::vector<unsigned char>& bytes,
                     const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(ErrorKind::Format, "bad PNG " + path.string() + ": " + image.message);

  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  const bool alpha = (image.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  if (gray && !alpha) {
    image.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
      std::string msg = image.message;
      png_image_free(&image);
      fail(ErrorKind::Format, "bad PNG " + path.string() + ": " + msg);
    }
    return GrayImage(static_cast<int>(image.width), static_cast<int>(image.height),
                     std::move(buf));
  }

  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::Format, "bad PNG " + path.string() + ": " + msg);
  }
  const int w = static_cast<int>(image.width), h = static_cast<int>(image.height);
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto* p = &buf[(static_cast<std::size_t>(y) * w + x) * 4];
      const double a = p[3] / 255.0;
      auto over_white = [a](double c) { return c * a + 255.0 * (1.0 - a); };
      out.at(x, y) = luminance(over_white(p[0]), over_white(p[1]), over_white(p[2]));
    }
  return out;
}

// Reads one whitespace-delimited PGM header token, skipping '#' comments.
std::string pgm_token(const std::vector<unsigned char>& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(bytes[pos])) tok += static_cast<char>(bytes[pos++]);
  return tok;
}

GrayImage decode_pgm(const std::vector<unsigned char>& bytes,
                     const std::filesystem::path& path) {
  std::size_t pos = 2;
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pgm_token(bytes, pos));
    h = std::stoi(pgm_token(bytes, pos));
    maxval = std::stoi(pgm_token(bytes, pos));
  } catch (const std::exception&) {
    fail(ErrorKind::Format, "bad PGM header in " + path.string());
  }
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
    fail(ErrorKind::Format, "bad PGM header in " + path.string());
  ++pos;  // single whitespace before raster
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * h * bpp;
  if (bytes.size() < pos + need) fail(ErrorKind::Format, "truncated PGM " + path.string());

  GrayImage out(w, h);
  auto& data = out.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    unsigned v = bpp == 1 ? bytes[pos + i]
                          : (unsigned(bytes[pos + 2 * i]) << 8) | bytes[pos + 2 * i + 1];
    data[i] = maxval == 255 ? static_cast<std::uint8_t>(v)
                            : static_cast<std::uint8_t>(std::lround(255.0 * v / maxval));
  }
  return out;
}

}  // namespace

GrayImage load_page(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  static constexpr std::array<unsigned char, 8> kPngSig{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngSig.begin(), kPngSig.end(), bytes.begin()))
    return decode_png(bytes, path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes, path);
  fail(ErrorKind::Format, "unsupported image format: " + path.string());
}

void save_png(const GrayImage& img, const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.data().data(), 0, nullptr))
    fail(ErrorKind::Io, "cannot write " + path.string() + ": " + image.message);
}

void save_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data().data()),
            static_cast<std::streamsize>(img.data().size()));
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

}  // namespace scoreid
