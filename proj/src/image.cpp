#include "scoreid/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include "scoreid/error.hpp"

namespace scoreid {

GrayImage::GrayImage(int width, int height, std::uint8_t fill)
    : width_(width), height_(height) {
  require(width >= 1 && height >= 1, ErrorKind::Argument,
          "image dimensions must be positive");
  data_.assign(static_cast<std::size_t>(width) * height, fill);
}

GrayImage::GrayImage(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  require(width >= 1 && height >= 1, ErrorKind::Argument,
          "image dimensions must be positive");
  require(data_.size() == static_cast<std::size_t>(width) * height,
          ErrorKind::Argument, "pixel buffer does not match dimensions");
}

BinaryImage::BinaryImage(int width, int height, bool fill)
    : width_(width), height_(height) {
  require(width >= 0 && height >= 0, ErrorKind::Argument,
          "mask dimensions must be non-negative");
  mask_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
}

std::size_t BinaryImage::count() const noexcept {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), 1));
}

int otsu_threshold(const GrayImage& img) {
  std::array<double, 256> hist{};
  for (auto v : img.data()) hist[v] += 1.0;
  const double total = static_cast<double>(img.data().size());
  if (std::count_if(hist.begin(), hist.end(), [](double h) { return h > 0; }) < 2)
    return -1;

  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[i];

  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_t = 0;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t;
}

BinaryImage binarize(const GrayImage& img) {
  BinaryImage out(img.width(), img.height());
  const int t = otsu_threshold(img);
  if (t < 0) return out;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (img.at(x, y) <= t) out.set(x, y, true);
  return out;
}

double estimate_noise_sigma(const GrayImage& img) {
  if (img.width() < 2 || img.height() < 1) return 0.0;
  std::array<std::size_t, 256> hist{};
  std::size_t n = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 1; x < img.width(); ++x) {
      ++hist[static_cast<std::size_t>(std::abs(int(img.at(x, y)) - int(img.at(x - 1, y))))];
      ++n;
    }
  std::size_t seen = 0;
  int median = 0;
  while (2 * (seen + hist[static_cast<std::size_t>(median)]) <= n) seen += hist[static_cast<std::size_t>(median++)];
  return median / (0.6745 * std::sqrt(2.0));
}

GrayImage median_filter3(const GrayImage& img) {
  const int w = img.width(), h = img.height();
  GrayImage out(w, h);
  std::array<std::uint8_t, 9> v{};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::size_t k = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) v[k++] = img.at(std::clamp(x + dx, 0, w - 1), std::clamp(y + dy, 0, h - 1));
      std::nth_element(v.begin(), v.begin() + 4, v.end());
      out.at(x, y) = v[4];
    }
  return out;
}

BinaryImage remove_specks(const BinaryImage& mask, int max_area) {
  BinaryImage out = mask;
  const int w = mask.width(), h = mask.height();
  std::vector<std::uint8_t> seen(mask.mask().size(), 0);
  std::vector<int> component, stack;
  for (int start = 0; start < w * h; ++start) {
    if (seen[static_cast<std::size_t>(start)] || !mask.mask()[static_cast<std::size_t>(start)]) continue;
    component.clear();
    stack.assign(1, start);
    seen[static_cast<std::size_t>(start)] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      component.push_back(p);
      const int x = p % w, y = p / w;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const int q = ny * w + nx;
          if (seen[static_cast<std::size_t>(q)] || !mask.mask()[static_cast<std::size_t>(q)]) continue;
          seen[static_cast<std::size_t>(q)] = 1;
          stack.push_back(q);
        }
    }
    if (static_cast<int>(component.size()) <= max_area)
      for (int p : component) out.set(p % w, p / w, false);
  }
  return out;
}

ProjectionProfile projection(const BinaryImage& img, Axis axis) {
  ProjectionProfile p;
  p.axis = axis;
  p.counts.assign(axis == Axis::Horizontal ? img.height() : img.width(), 0);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (img.at(x, y)) ++p.counts[axis == Axis::Horizontal ? y : x];
  return p;
}

std::vector<int> strip_offsets(int width, int n) {
  require(n >= 1 && n <= width, ErrorKind::Argument,
          "strip count must be in [1, width], got " + std::to_string(n));
  std::vector<int> off(n + 1, 0);
  const int base = width / n, extra = width % n;
  for (int i = 0; i < n; ++i) off[i + 1] = off[i] + base + (i < extra ? 1 : 0);
  return off;
}

std::vector<GrayImage> split_strips(const GrayImage& img, int n) {
  const auto off = strip_offsets(img.width(), n);
  std::vector<GrayImage> strips;
  strips.reserve(n);
  for (int i = 0; i < n; ++i)
    strips.push_back(crop(img, off[i], 0, off[i + 1] - off[i], img.height()));
  return strips;
}

GrayImage hconcat(std::span<const GrayImage> parts) {
  require(!parts.empty(), ErrorKind::Argument, "nothing to concatenate");
  const int h = parts.front().height();
  int w = 0;
  for (const auto& p : parts) {
    require(p.height() == h, ErrorKind::Argument, "strip heights differ");
    w += p.width();
  }
  GrayImage out(w, h);
  int x0 = 0;
  for (const auto& p : parts) {
    for (int y = 0; y < h; ++y)
      std::copy_n(p.row(y).data(), p.width(), &out.at(x0, y));
    x0 += p.width();
  }
  return out;
}

GrayImage crop(const GrayImage& img, int x, int y, int w, int h) {
  require(x >= 0 && y >= 0 && w >= 1 && h >= 1 && x + w <= img.width() &&
              y + h <= img.height(),
          ErrorKind::Argument, "crop rectangle outside image");
  GrayImage out(w, h);
  for (int r = 0; r < h; ++r) std::copy_n(img.row(y + r).data() + x, w, &out.at(0, r));
  return out;
}

BinaryImage crop(const BinaryImage& img, int x, int y, int w, int h) {
  require(x >= 0 && y >= 0 && w >= 0 && h >= 0 && x + w <= img.width() &&
              y + h <= img.height(),
          ErrorKind::Argument, "crop rectangle outside mask");
  BinaryImage out(w, h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out.set(c, r, img.at(x + c, y + r));
  return out;
}

GrayImage rotate_ccw(const GrayImage& img) {
  // out(x', y') with x' = y, y' = W-1-x
  GrayImage out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.at(y, img.width() - 1 - x) = img.at(x, y);
  return out;
}

GrayImage render(const BinaryImage& mask) {
  GrayImage out(std::max(mask.width(), 1), std::max(mask.height(), 1));
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) out.at(x, y) = mask.at(x, y) ? 0 : 255;
  return out;
}

}  // namespace scoreid
