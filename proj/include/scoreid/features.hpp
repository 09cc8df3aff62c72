#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scoreid/image.hpp"

namespace scoreid {

using FrameMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SlidingWindowConfig {
  int window_width = 34;
  double overlap = 0.5;
  int grid_rows = 4;
  int grid_cols = 4;
  int orientation_bins = 16;

  int dimension() const noexcept { return grid_rows * grid_cols * orientation_bins; }
  int stride() const;
  void validate() const;
  std::string canonical() const;
  std::uint64_t digest() const;
};

/// T x D frames ordered along the scan axis, with the left edge of each window.
struct FeatureSequence {
  FrameMatrix frames;
  std::vector<int> positions;
  int window_width = 0;
  std::uint64_t config_digest = 0;

  int length() const noexcept { return static_cast<int>(frames.rows()); }
  int dim() const noexcept { return static_cast<int>(frames.cols()); }
  const double* frame(int t) const noexcept { return frames.data() + static_cast<std::ptrdiff_t>(t) * frames.cols(); }
};

using SilenceMask = std::vector<bool>;

struct GradientField {
  int width = 0;
  int height = 0;
  std::vector<double> gx;
  std::vector<double> gy;

  double x_at(int x, int y) const { return gx[static_cast<std::size_t>(y) * width + x]; }
  double y_at(int x, int y) const { return gy[static_cast<std::size_t>(y) * width + x]; }
};

/// Central differences with replicate padding. Requires at least 3x3.
GradientField gradient(const GrayImage& img);

/// Concatenated per-cell orientation histograms of gradient magnitude, before
/// normalization. Orientation atan2(Gy, Gx) is binned over [0, 2pi).
std::vector<double> lgh_histogram(const GrayImage& patch, const SlidingWindowConfig& cfg);

/// lgh_histogram scaled to unit L2 norm; an all-zero histogram stays zero.
std::vector<double> lgh_window(const GrayImage& patch, const SlidingWindowConfig& cfg);

/// Left edges at multiples of the stride; a final window is clamped against
/// the right border when the stride does not land on it.
std::vector<int> window_positions(int width, const SlidingWindowConfig& cfg);

FeatureSequence sliding_lgh(const GrayImage& line, const SlidingWindowConfig& cfg);

/// Median length of vertical foreground runs; 0 for an empty mask.
int estimate_staff_thickness(const BinaryImage& line);

/// A frame is silence when no column of its window holds more ink than
/// `staff_lines` staff-line thicknesses.
SilenceMask detect_silence(const BinaryImage& line, const FeatureSequence& seq, int staff_lines = 5);

/// Keeps the frames whose mask entry is false.
FeatureSequence drop_frames(const FeatureSequence& seq, const SilenceMask& drop);

struct GaborParams {
  double wavelength = 16.0;
  double sigma = 0.56 * 16.0;
  double gamma = 0.5;
  double phase = 0.0;
  int rows = 12;

  static GaborParams for_staff_thickness(double thickness);
};

/// Zero-mean real Gabor kernel sampled on a square grid.
struct GaborKernel {
  int radius = 0;
  std::vector<double> taps;  // (2r+1)^2, row-major
};
GaborKernel make_gabor_kernel(const GaborParams& p, double theta);

/// 48 values for the default 12 rows: band-major, orientations 0, 45, 90,
/// 135 degrees within each band. Each value is the mean |response| in the band.
std::vector<double> gabor_features(const GrayImage& window, const GaborParams& p);

/// Filters the whole line once, then averages per window and band.
FeatureSequence sliding_gabor(const GrayImage& line, const SlidingWindowConfig& cfg,
                              const GaborParams& p);

/// Versioned little-endian: magic, version, T, D (u32), then T*D f64.
void save_features(const FeatureSequence& seq, const std::filesystem::path& path);
FeatureSequence load_features(const std::filesystem::path& path);

}  // namespace scoreid
