#include "scoreid/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "scoreid/binary_io.hpp"
#include "scoreid/error.hpp"

namespace scoreid {
namespace {

constexpr std::string_view kFeatureMagic{"SIDFEAT\0", 8};
constexpr std::uint32_t kFeatureVersion = 1;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

GradientField gradient_unchecked(const GrayImage& img) {
  const int w = img.width(), h = img.height();
  GradientField g{w, h, std::vector<double>(static_cast<std::size_t>(w) * h),
                  std::vector<double>(static_cast<std::size_t>(w) * h)};
  for (int y = 0; y < h; ++y) {
    const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
    for (int x = 0; x < w; ++x) {
      const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      g.gx[i] = double(img.at(xp, y)) - double(img.at(xm, y));
      g.gy[i] = double(img.at(x, yp)) - double(img.at(x, ym));
    }
  }
  return g;
}

int orientation_bin(double gx, double gy, int bins) {
  double phi = std::atan2(gy, gx);
  if (phi < 0) phi += kTwoPi;
  // The epsilon keeps exact multiples of 2pi/bins in their own bin.
  int b = static_cast<int>(std::floor(phi * bins / kTwoPi + 1e-9));
  return std::clamp(b, 0, bins - 1) % bins;
}

FeatureSequence make_sequence(int frames, int dim, const SlidingWindowConfig& cfg) {
  FeatureSequence seq;
  seq.frames = FrameMatrix::Zero(frames, dim);
  seq.window_width = cfg.window_width;
  seq.config_digest = cfg.digest();
  return seq;
}

}  // namespace

int SlidingWindowConfig::stride() const {
  return std::max(1, static_cast<int>(std::lround(window_width * (1.0 - overlap))));
}

void SlidingWindowConfig::validate() const {
  require(overlap >= 0.0 && overlap < 1.0, ErrorKind::Argument, "overlap must lie in [0,1)");
  require(grid_rows >= 1 && grid_cols >= 1 && orientation_bins >= 1, ErrorKind::Argument,
          "grid and bin counts must be positive");
  require(window_width >= grid_cols, ErrorKind::Argument,
          "window width must be at least the grid column count");
}

std::string SlidingWindowConfig::canonical() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "window-width=" << window_width << ";overlap=" << overlap << ";grid-rows=" << grid_rows
     << ";grid-cols=" << grid_cols << ";orientation-bins=" << orientation_bins;
  return ss.str();
}

std::uint64_t SlidingWindowConfig::digest() const { return fnv1a(canonical()); }

GradientField gradient(const GrayImage& img) {
  require(img.width() >= 3 && img.height() >= 3, ErrorKind::Argument,
          "gradient needs an image of at least 3x3");
  return gradient_unchecked(img);
}

std::vector<double> lgh_histogram(const GrayImage& patch, const SlidingWindowConfig& cfg) {
  require(patch.width() >= cfg.grid_cols && patch.height() >= cfg.grid_rows, ErrorKind::Argument,
          "patch smaller than the LGH grid");
  const int w = patch.width(), h = patch.height(), bins = cfg.orientation_bins;
  const GradientField g = gradient_unchecked(patch);
  std::vector<double> hist(static_cast<std::size_t>(cfg.dimension()), 0.0);

  std::vector<int> cell_col(w), cell_row(h);
  for (int x = 0; x < w; ++x) cell_col[x] = static_cast<int>(static_cast<long>(x) * cfg.grid_cols / w);
  for (int y = 0; y < h; ++y) cell_row[y] = static_cast<int>(static_cast<long>(y) * cfg.grid_rows / h);

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = g.x_at(x, y), gy = g.y_at(x, y);
      if (gx == 0.0 && gy == 0.0) continue;
      const double m = std::sqrt(gx * gx + gy * gy);
      const int cell = cell_row[y] * cfg.grid_cols + cell_col[x];
      hist[static_cast<std::size_t>(cell) * bins + orientation_bin(gx, gy, bins)] += m;
    }
  return hist;
}

std::vector<double> lgh_window(const GrayImage& patch, const SlidingWindowConfig& cfg) {
  auto v = lgh_histogram(patch, cfg);
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  if (n2 > 0.0) {
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
  }
  return v;
}

std::vector<int> window_positions(int width, const SlidingWindowConfig& cfg) {
  require(width >= cfg.window_width, ErrorKind::Argument,
          "line narrower than the sliding window (" + std::to_string(width) + " < " +
              std::to_string(cfg.window_width) + ")");
  const int stride = cfg.stride();
  std::vector<int> pos;
  for (int p = 0; p + cfg.window_width <= width; p += stride) pos.push_back(p);
  const int last = width - cfg.window_width;
  if (pos.back() != last) pos.push_back(last);
  return pos;
}

FeatureSequence sliding_lgh(const GrayImage& line, const SlidingWindowConfig& cfg) {
  cfg.validate();
  const auto pos = window_positions(line.width(), cfg);
  FeatureSequence seq = make_sequence(static_cast<int>(pos.size()), cfg.dimension(), cfg);
  seq.positions = pos;
  for (std::size_t t = 0; t < pos.size(); ++t) {
    const auto v = lgh_window(crop(line, pos[t], 0, cfg.window_width, line.height()), cfg);
    std::copy(v.begin(), v.end(), seq.frames.row(static_cast<Eigen::Index>(t)).data());
  }
  return seq;
}

int estimate_staff_thickness(const BinaryImage& line) {
  std::vector<int> runs;
  for (int x = 0; x < line.width(); ++x) {
    int run = 0;
    for (int y = 0; y <= line.height(); ++y) {
      if (y < line.height() && line.at(x, y)) {
        ++run;
      } else if (run > 0) {
        runs.push_back(run);
        run = 0;
      }
    }
  }
  if (runs.empty()) return 0;
  auto mid = runs.begin() + static_cast<std::ptrdiff_t>(runs.size() / 2);
  std::nth_element(runs.begin(), mid, runs.end());
  return *mid;
}

SilenceMask detect_silence(const BinaryImage& line, const FeatureSequence& seq, int staff_lines) {
  SilenceMask mask(static_cast<std::size_t>(seq.length()), true);
  const int thickness = estimate_staff_thickness(line);
  if (thickness == 0) return mask;
  const int budget = staff_lines * thickness;  // ceil of an integer product

  const auto profile = projection(line, Axis::Vertical).counts;
  for (int t = 0; t < seq.length(); ++t) {
    const int x0 = seq.positions[static_cast<std::size_t>(t)];
    const int x1 = std::min(x0 + seq.window_width, line.width());
    for (int x = x0; x < x1; ++x)
      if (profile[static_cast<std::size_t>(x)] > budget) {
        mask[static_cast<std::size_t>(t)] = false;
        break;
      }
  }
  return mask;
}

FeatureSequence drop_frames(const FeatureSequence& seq, const SilenceMask& drop) {
  require(drop.size() == static_cast<std::size_t>(seq.length()), ErrorKind::Argument,
          "mask length differs from sequence length");
  FeatureSequence out;
  out.window_width = seq.window_width;
  out.config_digest = seq.config_digest;
  const auto keep = static_cast<Eigen::Index>(std::count(drop.begin(), drop.end(), false));
  out.frames.resize(keep, seq.frames.cols());
  Eigen::Index r = 0;
  for (int t = 0; t < seq.length(); ++t) {
    if (drop[static_cast<std::size_t>(t)]) continue;
    out.frames.row(r++) = seq.frames.row(t);
    out.positions.push_back(seq.positions[static_cast<std::size_t>(t)]);
  }
  return out;
}

GaborParams GaborParams::for_staff_thickness(double thickness) {
  GaborParams p;
  p.wavelength = 2.0 * std::max(thickness, 1.0) * 4.0;
  p.sigma = 0.56 * p.wavelength;
  return p;
}

GaborKernel make_gabor_kernel(const GaborParams& p, double theta) {
  require(p.wavelength > 0 && p.sigma > 0 && p.gamma > 0, ErrorKind::Argument,
          "Gabor parameters must be positive");
  GaborKernel k;
  k.radius = static_cast<int>(std::ceil(3.0 * p.sigma / std::min(p.gamma, 1.0)));
  const int n = 2 * k.radius + 1;
  k.taps.resize(static_cast<std::size_t>(n) * n);
  const double c = std::cos(theta), s = std::sin(theta);
  double sum = 0.0;
  for (int v = -k.radius; v <= k.radius; ++v)
    for (int u = -k.radius; u <= k.radius; ++u) {
      const double xr = u * c + v * s;
      const double yr = -u * s + v * c;
      const double g = std::exp(-(xr * xr + p.gamma * p.gamma * yr * yr) / (2 * p.sigma * p.sigma)) *
                       std::cos(kTwoPi * xr / p.wavelength + p.phase);
      k.taps[static_cast<std::size_t>(v + k.radius) * n + (u + k.radius)] = g;
      sum += g;
    }
  // Remove the DC component so flat regions give no response.
  const double mean = sum / static_cast<double>(k.taps.size());
  for (double& t : k.taps) t -= mean;
  return k;
}

namespace {

constexpr double kGaborThetas[4] = {0.0, std::numbers::pi / 4, std::numbers::pi / 2,
                                    3 * std::numbers::pi / 4};

// |k * img| with replicate padding.
std::vector<double> filter_magnitude(const GrayImage& img, const GaborKernel& k) {
  const int w = img.width(), h = img.height(), r = k.radius, n = 2 * r + 1;
  std::vector<double> out(static_cast<std::size_t>(w) * h);
  std::vector<int> xs(static_cast<std::size_t>(w + 2 * r)), ys(static_cast<std::size_t>(h + 2 * r));
  for (int i = 0; i < w + 2 * r; ++i) xs[i] = std::clamp(i - r, 0, w - 1);
  for (int i = 0; i < h + 2 * r; ++i) ys[i] = std::clamp(i - r, 0, h - 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int v = 0; v < n; ++v) {
        const auto row = img.row(ys[y + v]);
        const double* kt = &k.taps[static_cast<std::size_t>(v) * n];
        for (int u = 0; u < n; ++u) acc += kt[u] * row[xs[x + u]];
      }
      out[static_cast<std::size_t>(y) * w + x] = std::abs(acc);
    }
  return out;
}

void band_means(const std::vector<double>& resp, int stride_w, int x0, int w, int h, int rows,
                int orient, double* out) {
  for (int b = 0; b < rows; ++b) {
    const int y0 = b * h / rows, y1 = (b + 1) * h / rows;
    double acc = 0.0;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x0 + w; ++x) acc += resp[static_cast<std::size_t>(y) * stride_w + x];
    const int area = (y1 - y0) * w;
    out[b * 4 + orient] = area > 0 ? acc / area : 0.0;
  }
}

}  // namespace

std::vector<double> gabor_features(const GrayImage& window, const GaborParams& p) {
  require(window.height() >= p.rows, ErrorKind::Argument, "window shorter than the band count");
  std::vector<double> out(static_cast<std::size_t>(p.rows) * 4, 0.0);
  for (int o = 0; o < 4; ++o) {
    const auto resp = filter_magnitude(window, make_gabor_kernel(p, kGaborThetas[o]));
    band_means(resp, window.width(), 0, window.width(), window.height(), p.rows, o, out.data());
  }
  return out;
}

FeatureSequence sliding_gabor(const GrayImage& line, const SlidingWindowConfig& cfg,
                              const GaborParams& p) {
  require(line.height() >= p.rows, ErrorKind::Argument, "line shorter than the band count");
  const auto pos = window_positions(line.width(), cfg);
  FeatureSequence seq = make_sequence(static_cast<int>(pos.size()), p.rows * 4, cfg);
  seq.positions = pos;
  for (int o = 0; o < 4; ++o) {
    const auto resp = filter_magnitude(line, make_gabor_kernel(p, kGaborThetas[o]));
    for (std::size_t t = 0; t < pos.size(); ++t)
      band_means(resp, line.width(), pos[t], cfg.window_width, line.height(), p.rows, o,
                 seq.frames.row(static_cast<Eigen::Index>(t)).data());
  }
  return seq;
}

void save_features(const FeatureSequence& seq, const std::filesystem::path& path) {
  BinaryWriter w;
  w.magic(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(seq.length()));
  w.u32(static_cast<std::uint32_t>(seq.dim()));
  w.f64s({seq.frames.data(), static_cast<std::size_t>(seq.frames.size())});
  w.save(path);
}

FeatureSequence load_features(const std::filesystem::path& path) {
  auto r = BinaryReader::open(path);
  r.expect_magic(kFeatureMagic);
  if (r.u32() != kFeatureVersion) fail(ErrorKind::Format, "unsupported feature file version");
  const auto t = r.u32(), d = r.u32();
  FeatureSequence seq;
  seq.frames.resize(t, d);
  const auto vals = r.f64s(static_cast<std::size_t>(t) * d);
  std::copy(vals.begin(), vals.end(), seq.frames.data());
  if (!r.at_end()) fail(ErrorKind::Format, "trailing bytes in " + path.string());
  for (std::uint32_t i = 0; i < t; ++i) seq.positions.push_back(static_cast<int>(i));
  return seq;
}

}  // namespace scoreid
