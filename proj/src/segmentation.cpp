#include "scoreid/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "scoreid/error.hpp"

namespace scoreid {
namespace {

int median_of(std::vector<int> v) {
  if (v.empty()) return 0;
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

double quantile(std::vector<double> v, double q) {
  auto at = v.begin() + static_cast<std::ptrdiff_t>(static_cast<double>(v.size() - 1) * q);
  std::nth_element(v.begin(), at, v.end());
  return *at;
}

std::vector<double> moving_average(const std::vector<int>& x, int width) {
  const int n = static_cast<int>(x.size());
  const int half = std::max(width, 1) / 2;
  std::vector<double> prefix(static_cast<std::size_t>(n) + 1, 0.0);
  for (int i = 0; i < n; ++i) prefix[static_cast<std::size_t>(i) + 1] = prefix[static_cast<std::size_t>(i)] + x[static_cast<std::size_t>(i)];
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int a = std::max(i - half, 0), b = std::min(i + half, n - 1);
    out[static_cast<std::size_t>(i)] = (prefix[static_cast<std::size_t>(b) + 1] - prefix[static_cast<std::size_t>(a)]) / (2 * half + 1);
  }
  return out;
}

std::vector<LineBox> merge_touching(std::vector<LineBox> boxes) {
  std::vector<LineBox> out;
  for (const auto& b : boxes) {
    if (!out.empty() && b.top <= out.back().bottom + 1)
      out.back().bottom = std::max(out.back().bottom, b.bottom);
    else
      out.push_back(b);
  }
  return out;
}

}  // namespace

int estimate_staff_height(const BinaryImage& page, int staff_lines) {
  const auto counts = projection(page, Axis::Horizontal).counts;
  if (counts.empty()) return 0;
  const int peak = *std::max_element(counts.begin(), counts.end());
  if (peak == 0) return 0;
  std::vector<int> centers, lengths;
  for (int y = 0; y < static_cast<int>(counts.size());) {
    if (2 * counts[static_cast<std::size_t>(y)] < peak) {
      ++y;
      continue;
    }
    const int start = y;
    while (y < static_cast<int>(counts.size()) && 2 * counts[static_cast<std::size_t>(y)] >= peak) ++y;
    centers.push_back((start + y - 1) / 2);
    lengths.push_back(y - start);
  }
  if (centers.size() < 2) return 0;
  std::vector<int> spacing;
  for (std::size_t i = 1; i < centers.size(); ++i) spacing.push_back(centers[i] - centers[i - 1]);
  return (staff_lines - 1) * median_of(spacing) + median_of(lengths);
}

std::vector<LineBox> segment_lines_projection(const GrayImage& page, const ProjectionParams& p) {
  require(p.threshold > 0.0 && p.threshold < 1.0, ErrorKind::Argument, "segmentation threshold must lie in (0,1)");
  require(p.min_gap >= 0, ErrorKind::Argument, "minimum gap must be non-negative");
  if (page.empty()) return {};
  const BinaryImage bin = binarize(page);
  const auto counts = projection(bin, Axis::Horizontal).counts;
  if (std::all_of(counts.begin(), counts.end(), [](int c) { return c == 0; })) return {};

  int staff = estimate_staff_height(bin, p.staff_lines);
  if (staff <= 0) staff = std::max(page.height() / 20, 2);
  const auto smooth = moving_average(counts, std::max(staff / 2, 1));
  const double base = quantile(smooth, 0.1);
  const double top = *std::max_element(smooth.begin(), smooth.end());
  if (top <= base) return {};
  const double level = base + p.threshold * (top - base);

  std::vector<LineBox> runs;
  const int h = static_cast<int>(smooth.size());
  for (int y = 0; y < h;) {
    if (smooth[static_cast<std::size_t>(y)] <= level) {
      ++y;
      continue;
    }
    const int start = y;
    while (y < h && smooth[static_cast<std::size_t>(y)] > level) ++y;
    if (!runs.empty() && start - runs.back().bottom - 1 < p.min_gap)
      runs.back().bottom = y - 1;
    else
      runs.push_back({start, y - 1, -1});
  }
  // Runs grow outwards until the profile reaches the background level, taken
  // as median + 3 MAD of the rows outside every run so that noise-only rows
  // stop the growth.
  std::vector<double> outside;
  for (int y = 0, k = 0; y < h; ++y) {
    while (k < static_cast<int>(runs.size()) && runs[static_cast<std::size_t>(k)].bottom < y) ++k;
    if (k == static_cast<int>(runs.size()) || y < runs[static_cast<std::size_t>(k)].top)
      outside.push_back(smooth[static_cast<std::size_t>(y)]);
  }
  double floor = base;
  if (!outside.empty()) {
    const double med = quantile(outside, 0.5);
    std::vector<double> dev;
    for (double v : outside) dev.push_back(std::abs(v - med));
    floor = std::max(base, med + 3.0 * quantile(std::move(dev), 0.5));
  }
  for (auto& r : runs) {
    while (r.top > 0 && smooth[static_cast<std::size_t>(r.top - 1)] > floor) --r.top;
    while (r.bottom + 1 < h && smooth[static_cast<std::size_t>(r.bottom + 1)] > floor) ++r.bottom;
  }
  return merge_touching(std::move(runs));
}

FeatureSequence extract_strip_frames(const GrayImage& strip, const SlidingWindowConfig& cfg) {
  require(strip.height() >= cfg.window_width, ErrorKind::Argument,
          "strip of height " + std::to_string(strip.height()) + " is shorter than the window");
  return sliding_lgh(rotate_ccw(strip), cfg);
}

StripAlignment align_strip(const GrayImage& strip, int strip_index, const FillerGrammar& grammar,
                           const SlidingWindowConfig& cfg) {
  const FeatureSequence seq = extract_strip_frames(strip, cfg);
  StripAlignment a;
  a.strip = strip_index;
  a.zones = forced_align(seq.frames, grammar);
  for (int pos : seq.positions) a.frame_rows.push_back({pos, pos + seq.window_width - 1});
  return a;
}

std::vector<LineBox> detect_block_lines(const GrayImage& strip, int strip_index, const FillerGrammar& grammar,
                                        const SlidingWindowConfig& cfg, std::string* diagnostic) {
  StripAlignment a;
  try {
    a = align_strip(strip, strip_index, grammar, cfg);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Alignment) throw;
    if (diagnostic) *diagnostic = "strip " + std::to_string(strip_index) + ": " + e.what();
    return {};
  }
  std::vector<LineBox> boxes;
  for (const auto& s : a.zones.segments)
    if (s.label == ZoneLabel::Score)
      boxes.push_back({a.frame_rows[static_cast<std::size_t>(s.start)].top,
                       a.frame_rows[static_cast<std::size_t>(s.end)].bottom, strip_index});
  return merge_touching(std::move(boxes));
}

std::vector<ZoneLabel> label_frames(const FeatureSequence& seq, std::span<const RowInterval> boxes) {
  std::vector<ZoneLabel> labels(static_cast<std::size_t>(seq.length()), ZoneLabel::WithoutScore);
  for (int t = 0; t < seq.length(); ++t) {
    const int a = seq.positions[static_cast<std::size_t>(t)], b = a + seq.window_width - 1;
    int covered = 0;
    for (int y = a; y <= b; ++y)
      for (const auto& box : boxes)
        if (y >= box.top && y <= box.bottom) {
          ++covered;
          break;
        }
    if (2 * covered >= seq.window_width) labels[static_cast<std::size_t>(t)] = ZoneLabel::Score;
  }
  return labels;
}

std::vector<LabelledStrip> zone_training_set(const GrayImage& page, std::span<const RowInterval> boxes,
                                             int strips, const SlidingWindowConfig& cfg) {
  std::vector<LabelledStrip> out;
  for (const auto& strip : split_strips(page, strips)) {
    const FeatureSequence seq = extract_strip_frames(strip, cfg);
    out.push_back({seq.frames, label_frames(seq, boxes)});
  }
  return out;
}

void write_segmentation(std::ostream& out, std::span<const LineBox> boxes) {
  for (const auto& b : boxes) {
    if (b.strip < 0)
      out << "page score " << b.top << ' ' << b.bottom << '\n';
    else
      out << "strip " << b.strip << " score " << b.top << ' ' << b.bottom << '\n';
  }
}

std::vector<LineBox> read_segmentation(std::istream& in) {
  std::vector<LineBox> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ss(line);
    std::string kind, word;
    LineBox b;
    ss >> kind;
    if (kind == "strip") ss >> b.strip;
    else if (kind != "page") fail(ErrorKind::Format, "segmentation line " + std::to_string(lineno) + ": unknown record");
    ss >> word >> b.top >> b.bottom;
    if (!ss || word != "score" || b.top > b.bottom)
      fail(ErrorKind::Format, "segmentation line " + std::to_string(lineno) + " is malformed");
    boxes.push_back(b);
  }
  return boxes;
}

}  // namespace scoreid
