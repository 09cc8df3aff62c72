#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "scoreid/alignment.hpp"
#include "scoreid/features.hpp"
#include "scoreid/image.hpp"
#include "scoreid/synth.hpp"

namespace scoreid {

/// Row interval (inclusive) of one score-line. `strip` is -1 for a whole-page
/// line and the strip index for a block-line.
struct LineBox {
  int top = 0;
  int bottom = 0;
  int strip = -1;

  int height() const noexcept { return bottom - top + 1; }
  friend bool operator==(const LineBox&, const LineBox&) = default;
};

struct ProjectionParams {
  double threshold = 0.1;  // fraction of the profile range above its lower decile
  int min_gap = 3;         // runs closer than this many rows are merged
  int staff_lines = 5;
};

/// Staff height from the spacing of strong profile rows; 0 when no staff
/// structure is visible.
int estimate_staff_height(const BinaryImage& page, int staff_lines = 5);

/// Binarize, project rows, smooth with a moving average half a staff high,
/// keep runs above the relative threshold, merge close runs, then widen each
/// run while the smoothed profile stays above the background level of the
/// rows outside every run. Blank pages give [].
std::vector<LineBox> segment_lines_projection(const GrayImage& page, const ProjectionParams& p = {});

/// Top-to-bottom scan of a strip with horizontal windows: sliding_lgh on the
/// strip rotated a quarter turn counter-clockwise. Positions are strip rows.
FeatureSequence extract_strip_frames(const GrayImage& strip, const SlidingWindowConfig& cfg);

struct StripAlignment {
  int strip = 0;
  ZoneAlignment zones;
  std::vector<RowInterval> frame_rows;
};

StripAlignment align_strip(const GrayImage& strip, int strip_index, const FillerGrammar& grammar,
                           const SlidingWindowConfig& cfg);

/// Score segments as row boxes, from the first frame's top row to the last
/// frame's bottom row, merged where they touch. An alignment failure yields
/// [] and a message in `diagnostic`.
std::vector<LineBox> detect_block_lines(const GrayImage& strip, int strip_index, const FillerGrammar& grammar,
                                        const SlidingWindowConfig& cfg, std::string* diagnostic = nullptr);

/// A frame is Score when at least half of its rows fall inside the boxes.
std::vector<ZoneLabel> label_frames(const FeatureSequence& seq, std::span<const RowInterval> boxes);

/// Cuts the page into strips and labels every strip frame against the
/// ground-truth line boxes.
std::vector<LabelledStrip> zone_training_set(const GrayImage& page, std::span<const RowInterval> boxes,
                                             int strips, const SlidingWindowConfig& cfg);

/// `page score <top> <bottom>` or `strip <i> score <top> <bottom>` per box.
void write_segmentation(std::ostream& out, std::span<const LineBox> boxes);
std::vector<LineBox> read_segmentation(std::istream& in);

}  // namespace scoreid
