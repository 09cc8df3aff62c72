#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace scoreid {

/// 8-bit grayscale raster, row-major. 0 is black ink, 255 is paper.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, std::uint8_t fill = 255);
  GrayImage(int width, int height, std::vector<std::uint8_t> data);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return data_.empty(); }

  std::uint8_t at(int x, int y) const noexcept {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  std::uint8_t& at(int x, int y) noexcept {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  std::span<const std::uint8_t> row(int y) const noexcept {
    return {data_.data() + static_cast<std::size_t>(y) * width_,
            static_cast<std::size_t>(width_)};
  }
  const std::vector<std::uint8_t>& data() const noexcept { return data_; }
  std::vector<std::uint8_t>& data() noexcept { return data_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Foreground mask; true marks ink.
class BinaryImage {
 public:
  BinaryImage() = default;
  BinaryImage(int width, int height, bool fill = false);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  bool at(int x, int y) const noexcept {
    return mask_[static_cast<std::size_t>(y) * width_ + x] != 0;
  }
  void set(int x, int y, bool v) noexcept {
    mask_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0;
  }
  std::size_t count() const noexcept;
  const std::vector<std::uint8_t>& mask() const noexcept { return mask_; }

  friend bool operator==(const BinaryImage&, const BinaryImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> mask_;
};

enum class Axis { Horizontal, Vertical };

/// Foreground counts per row (Horizontal) or per column (Vertical).
struct ProjectionProfile {
  Axis axis = Axis::Horizontal;
  std::vector<int> counts;
};

/// Otsu threshold over the 256-bin histogram. Returns -1 for a constant image.
int otsu_threshold(const GrayImage& img);

/// Pixels at or below the Otsu threshold become foreground. A constant image
/// is all background.
BinaryImage binarize(const GrayImage& img);

/// Robust per-pixel noise sigma from horizontal neighbour differences
/// (median absolute difference / (0.6745 sqrt 2)). Zero on clean renderings.
double estimate_noise_sigma(const GrayImage& img);

/// 3x3 median with edge clamping. Strokes at least two pixels wide keep
/// their edges; isolated noise pixels vanish.
GrayImage median_filter3(const GrayImage& img);

/// Clears 8-connected foreground components of at most `max_area` pixels.
BinaryImage remove_specks(const BinaryImage& mask, int max_area);

ProjectionProfile projection(const BinaryImage& img, Axis axis);

/// Splits into `n` vertical strips; the first `width % n` strips are one
/// pixel wider.
std::vector<GrayImage> split_strips(const GrayImage& img, int n);

/// Column offsets of the strips produced by split_strips, plus the width.
std::vector<int> strip_offsets(int width, int n);

GrayImage hconcat(std::span<const GrayImage> parts);

GrayImage crop(const GrayImage& img, int x, int y, int w, int h);
BinaryImage crop(const BinaryImage& img, int x, int y, int w, int h);

/// Quarter turn counter-clockwise: the top row becomes the left column.
GrayImage rotate_ccw(const GrayImage& img);

/// Renders a mask as 0 (ink) / 255 (paper).
GrayImage render(const BinaryImage& mask);

}  // namespace scoreid
