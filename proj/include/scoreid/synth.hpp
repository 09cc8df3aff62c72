#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "scoreid/image.hpp"

namespace scoreid {

/// Layout and style knobs for one synthetic score page. Writer identity lives
/// entirely in `style_seed`; `seed` passed to generate_page picks the notes.
struct SynthPageSpec {
  std::uint64_t style_seed = 1;
  int width = 1200;
  int height = 0;  // 0: derived from the layout
  int lines_per_page = 4;
  int staff_lines = 5;
  int staff_gap = 12;
  int staff_thickness = 2;
  double symbol_density = 3.0;    // expected symbols per 100 px
  double stroke_thickness = 2.5;  // base pen width, scaled per writer
  double curvature_amplitude = 0.0;
  double curvature_period = 400.0;
};

struct RowInterval {
  int top = 0;
  int bottom = 0;  // inclusive
  friend bool operator==(const RowInterval&, const RowInterval&) = default;
};

struct ColumnInterval {
  int first = 0;
  int last = 0;  // inclusive
  friend bool operator==(const ColumnInterval&, const ColumnInterval&) = default;
};

struct SynthGroundTruth {
  int width = 0;
  int height = 0;
  std::vector<RowInterval> line_boxes;
  std::vector<std::vector<ColumnInterval>> silence;  // per line
  BinaryImage ink;

  friend bool operator==(const SynthGroundTruth&, const SynthGroundTruth&) = default;
};

/// Per-writer glyph style, a pure function of the style seed.
struct WriterStyle {
  double head_rx = 0.7;  // in staff gaps
  double head_ry = 0.5;
  double head_tilt = 0.0;  // radians
  double filled_prob = 0.7;
  double stem_length = 3.0;  // in staff gaps
  double stem_slant = 0.0;   // dx per dy
  double pen_scale = 1.0;
  double beam_prob = 0.4;
  double beam_thickness = 0.45;  // in staff gaps
  double flag_prob = 0.3;
  double flag_curl = 1.0;
  double bar_prob = 0.08;
  double sharp_prob = 0.1;
  double rest_prob = 0.08;
  double spacing_scale = 1.0;
  double silence_prob = 0.12;
};

WriterStyle derive_style(std::uint64_t style_seed);

/// Throws Layout when the requested lines do not fit the page.
std::pair<GrayImage, SynthGroundTruth> generate_page(const SynthPageSpec& spec,
                                                     std::uint64_t seed);

/// Additive N(0, (level*255)^2) per pixel, rounded and clamped to [0,255].
GrayImage add_gaussian_noise(const GrayImage& img, double level, std::uint64_t seed);

/// Shifts column x down by round(amplitude * sin(2 pi x / period)); vacated
/// rows become paper.
GrayImage apply_curvature(const GrayImage& img, double amplitude, double period);
BinaryImage apply_curvature(const BinaryImage& mask, double amplitude, double period);

/// Line-oriented sidecar:
///   page <width> <height>
///   line <top> <bottom> silence <first>-<last> ...
void write_ground_truth(const SynthGroundTruth& gt, const std::filesystem::path& path);
SynthGroundTruth read_ground_truth(const std::filesystem::path& path);

/// Sidecar location used by the CLI and pipeline: `<stem>.gt.txt` next to the page.
std::filesystem::path ground_truth_path(const std::filesystem::path& page);

}  // namespace scoreid
