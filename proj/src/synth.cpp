#include "scoreid/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "scoreid/error.hpp"

namespace scoreid {
namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool chance(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

// Rasterizer confined to one line box; every stamp is clipped to its rows.
class Canvas {
 public:
  Canvas(BinaryImage& mask, int top, int bottom) : mask_(mask), top_(top), bottom_(bottom) {}

  void segment(double x0, double y0, double x1, double y1, double width) {
    const double r = std::max(width, 1.0) / 2.0;
    const int xa = static_cast<int>(std::floor(std::min(x0, x1) - r));
    const int xb = static_cast<int>(std::ceil(std::max(x0, x1) + r));
    const int ya = static_cast<int>(std::floor(std::min(y0, y1) - r));
    const int yb = static_cast<int>(std::ceil(std::max(y0, y1) + r));
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    for (int y = ya; y <= yb; ++y)
      for (int x = xa; x <= xb; ++x) {
        const double px = x + 0.5 - x0, py = y + 0.5 - y0;
        double t = len2 > 0 ? (px * dx + py * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double ex = px - t * dx, ey = py - t * dy;
        if (ex * ex + ey * ey <= r * r) plot(x, y);
      }
  }

  // Filled (or ring of width `ring`) ellipse rotated by `tilt`.
  void ellipse(double cx, double cy, double rx, double ry, double tilt, double ring) {
    const double c = std::cos(tilt), s = std::sin(tilt);
    const int ext = static_cast<int>(std::ceil(std::max(rx, ry))) + 1;
    const double irx = std::max(rx - ring, 0.0), iry = std::max(ry - ring, 0.0);
    for (int y = static_cast<int>(cy) - ext; y <= static_cast<int>(cy) + ext; ++y)
      for (int x = static_cast<int>(cx) - ext; x <= static_cast<int>(cx) + ext; ++x) {
        const double px = x + 0.5 - cx, py = y + 0.5 - cy;
        const double u = px * c + py * s, v = -px * s + py * c;
        const double outer = (u * u) / (rx * rx) + (v * v) / (ry * ry);
        if (outer > 1.0) continue;
        if (ring > 0 && irx > 0 && iry > 0) {
          const double inner = (u * u) / (irx * irx) + (v * v) / (iry * iry);
          if (inner < 1.0) continue;
        }
        plot(x, y);
      }
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, double width) {
    for (std::size_t i = 1; i < pts.size(); ++i)
      segment(pts[i - 1].first, pts[i - 1].second, pts[i].first, pts[i].second, width);
  }

 private:
  void plot(int x, int y) {
    if (x < 0 || x >= mask_.width() || y < top_ || y > bottom_ || y < 0 || y >= mask_.height())
      return;
    mask_.set(x, y, true);
  }

  BinaryImage& mask_;
  int top_, bottom_;
};

struct StaffGeometry {
  int top = 0;  // first row of the first staff line
  int gap = 12;
  int thickness = 2;
  int lines = 5;

  double position_y(int pos) const {  // pos 0 = top line, 2 per gap
    return top + pos * (gap + thickness) / 2.0 + thickness / 2.0;
  }
  int height() const { return lines * thickness + (lines - 1) * gap; }
};

class LineComposer {
 public:
  LineComposer(Canvas& canvas, const StaffGeometry& staff, const WriterStyle& style,
               double pen, double density, Rng& rng)
      : cv_(canvas), st_(staff), style_(style), pen_(pen), density_(density), rng_(rng) {}

  void compose(int width) {
    double x = uniform(rng_, 6.0, 18.0);
    const double step = 100.0 / std::max(density_ * style_.spacing_scale, 0.1);
    while (x < width - 10) {
      if (chance(rng_, style_.silence_prob)) {
        x += uniform(rng_, 45.0, 110.0);
        continue;
      }
      const double r = uniform(rng_, 0.0, 1.0);
      double used = 0;
      if (r < style_.bar_prob) {
        used = bar(x);
      } else if (r < style_.bar_prob + style_.sharp_prob) {
        used = sharp(x);
      } else if (r < style_.bar_prob + style_.sharp_prob + style_.rest_prob) {
        used = rest(x);
      } else if (chance(rng_, style_.beam_prob)) {
        used = beamed_group(x, 2 + static_cast<int>(uniform(rng_, 0.0, 3.0)), step);
      } else {
        used = single_note(x);
      }
      x += used + step * uniform(rng_, 0.55, 1.0);
    }
  }

 private:
  double jitter(double v) { return v * uniform(rng_, 0.92, 1.08); }
  double gap() const { return st_.gap; }

  struct Head {
    double cx, cy, rx, ry;
    bool up;
  };

  Head head(double x, int pos) {
    Head h;
    h.rx = jitter(style_.head_rx) * gap();
    h.ry = jitter(style_.head_ry) * gap();
    h.cx = x + h.rx;
    h.cy = st_.position_y(pos);
    h.up = pos >= 4;
    const bool filled = chance(rng_, style_.filled_prob);
    cv_.ellipse(h.cx, h.cy, h.rx, h.ry, style_.head_tilt + uniform(rng_, -0.08, 0.08),
                filled ? 0.0 : pen_);
    return h;
  }

  // Returns the stem tip.
  std::pair<double, double> stem(const Head& h, double length) {
    const double sx = h.up ? h.cx + h.rx * 0.85 : h.cx - h.rx * 0.85;
    const double dir = h.up ? -1.0 : 1.0;
    const double tx = sx + style_.stem_slant * length;
    const double ty = h.cy + dir * length;
    cv_.segment(sx, h.cy, tx, ty, pen_);
    return {tx, ty};
  }

  int random_position() { return static_cast<int>(uniform(rng_, 0.0, 9.0)); }

  double single_note(double x) {
    const Head h = head(x, random_position());
    const auto [tx, ty] = stem(h, jitter(style_.stem_length) * gap());
    if (chance(rng_, style_.flag_prob)) {
      const double dir = h.up ? 1.0 : -1.0;
      const double c = style_.flag_curl;
      cv_.polyline({{tx, ty},
                    {tx + 0.45 * gap(), ty + dir * 0.6 * gap() * c},
                    {tx + 0.7 * gap(), ty + dir * 1.3 * gap()},
                    {tx + 0.45 * gap() * c, ty + dir * 2.0 * gap()}},
                   pen_);
    }
    return 2 * h.rx + 2;
  }

  double beamed_group(double x, int n, double step) {
    const int base = random_position();
    const bool up = base >= 4;
    const double spacing = std::max(step * 0.45, 2.6 * style_.head_rx * gap());
    std::vector<std::pair<double, double>> tips;
    double end = x;
    for (int i = 0; i < n; ++i) {
      int pos = std::clamp(base + static_cast<int>(uniform(rng_, -2.0, 3.0)), 0, 8);
      if ((pos >= 4) != up) pos = up ? 4 : 3;
      Head h = head(x + i * spacing, pos);
      h.up = up;
      tips.push_back(stem(h, jitter(style_.stem_length) * gap()));
      end = h.cx + h.rx;
    }
    // Beam drawn at a common height so it stays legible.
    const double y0 = up ? std::min(tips.front().second, tips.back().second)
                         : std::max(tips.front().second, tips.back().second);
    const double thick = style_.beam_thickness * gap();
    cv_.segment(tips.front().first, y0, tips.back().first, y0 + (up ? 1 : -1) * 0.15 * gap(),
                thick);
    return end - x + 2;
  }

  double bar(double x) {
    cv_.segment(x, st_.top, x + style_.stem_slant * 0.3 * st_.height(), st_.top + st_.height() - 1,
                pen_ * 1.1);
    return pen_ + 2;
  }

  double sharp(double x) {
    const double cy = st_.position_y(random_position());
    const double g = gap();
    cv_.segment(x + 0.3 * g, cy - 1.3 * g, x + 0.3 * g + style_.stem_slant * g, cy + 1.3 * g, pen_);
    cv_.segment(x + 0.9 * g, cy - 1.4 * g, x + 0.9 * g + style_.stem_slant * g, cy + 1.2 * g, pen_);
    cv_.segment(x, cy - 0.3 * g, x + 1.2 * g, cy - 0.6 * g, pen_ * 1.6);
    cv_.segment(x, cy + 0.5 * g, x + 1.2 * g, cy + 0.2 * g, pen_ * 1.6);
    return 1.3 * g + 2;
  }

  double rest(double x) {
    const double g = gap();
    const double cy = st_.position_y(4);
    cv_.polyline({{x + 0.2 * g, cy - 1.5 * g},
                  {x + 0.9 * g, cy - 0.6 * g},
                  {x + 0.2 * g, cy + 0.1 * g},
                  {x + 0.9 * g, cy + 0.8 * g},
                  {x + 0.3 * g, cy + 1.5 * g}},
                 pen_ * 1.3);
    return g + 2;
  }

  Canvas& cv_;
  StaffGeometry st_;
  const WriterStyle& style_;
  double pen_;
  double density_;
  Rng& rng_;
};

template <class Raster, class Value>
Raster curvature_impl(const Raster& img, double amplitude, double period, Value fill) {
  require(period > 0, ErrorKind::Argument, "curvature period must be positive");
  Raster out(img.width(), img.height(), fill);
  for (int x = 0; x < img.width(); ++x) {
    const long shift = std::lround(amplitude * std::sin(2.0 * std::numbers::pi * x / period));
    for (int y = 0; y < img.height(); ++y) {
      const long src = y - shift;
      if (src < 0 || src >= img.height()) continue;
      if constexpr (std::is_same_v<Raster, GrayImage>)
        out.at(x, y) = img.at(x, static_cast<int>(src));
      else
        out.set(x, y, img.at(x, static_cast<int>(src)));
    }
  }
  return out;
}

}  // namespace

WriterStyle derive_style(std::uint64_t style_seed) {
  Rng rng(style_seed ^ 0x5c0e1dULL);
  WriterStyle s;
  s.head_rx = uniform(rng, 0.55, 0.95);
  s.head_ry = uniform(rng, 0.36, 0.58);
  s.head_tilt = uniform(rng, -0.8, 0.8);
  s.filled_prob = uniform(rng, 0.25, 0.95);
  s.stem_length = uniform(rng, 2.6, 3.6);
  s.stem_slant = uniform(rng, -0.35, 0.35);
  s.pen_scale = uniform(rng, 0.6, 1.6);
  s.beam_prob = uniform(rng, 0.1, 0.7);
  s.beam_thickness = uniform(rng, 0.3, 0.6);
  s.flag_prob = uniform(rng, 0.1, 0.6);
  s.flag_curl = uniform(rng, 0.5, 1.5);
  s.bar_prob = uniform(rng, 0.03, 0.12);
  s.sharp_prob = uniform(rng, 0.0, 0.2);
  s.rest_prob = uniform(rng, 0.0, 0.15);
  s.spacing_scale = uniform(rng, 0.75, 1.3);
  s.silence_prob = uniform(rng, 0.08, 0.2);
  return s;
}

std::pair<GrayImage, SynthGroundTruth> generate_page(const SynthPageSpec& spec,
                                                     std::uint64_t seed) {
  require(spec.width >= 1 && spec.height >= 0 && spec.lines_per_page >= 0 &&
              spec.staff_lines >= 1 && spec.staff_gap >= 1 && spec.staff_thickness >= 1 &&
              spec.symbol_density >= 0 && spec.stroke_thickness > 0,
          ErrorKind::Argument, "invalid synthetic page spec");
  require(spec.curvature_amplitude == 0.0 || spec.curvature_period > 0, ErrorKind::Argument,
          "curvature period must be positive");

  const StaffGeometry proto{0, spec.staff_gap, spec.staff_thickness, spec.staff_lines};
  const int margin = spec.staff_gap;
  const int box_h = proto.height() + 2 * margin;
  const int amp = static_cast<int>(std::ceil(std::abs(spec.curvature_amplitude)));
  const int L = spec.lines_per_page;

  int height = spec.height;
  if (height == 0) height = L == 0 ? 8 * spec.staff_gap : L * box_h + (L + 1) * 8 * spec.staff_gap;
  const int spare = height - L * box_h;
  const int gap = L == 0 ? 0 : spare / (L + 1);
  if (L > 0 && (gap < spec.staff_gap || gap < 2 * amp + 1))
    fail(ErrorKind::Layout, "page too small for " + std::to_string(L) + " score-lines");

  SynthGroundTruth gt;
  gt.width = spec.width;
  gt.height = height;
  gt.ink = BinaryImage(spec.width, height);

  const WriterStyle style = derive_style(spec.style_seed);
  const double pen = std::max(1.0, spec.stroke_thickness * style.pen_scale);
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + spec.style_seed);

  for (int l = 0; l < L; ++l) {
    const int box_top = gap + l * (box_h + gap) + (spare - (L + 1) * gap) / 2;
    const int box_bottom = box_top + box_h - 1;
    StaffGeometry staff = proto;
    staff.top = box_top + margin;

    BinaryImage glyphs(spec.width, height);
    Canvas canvas(glyphs, box_top, box_bottom);
    LineComposer(canvas, staff, style, pen, spec.symbol_density, rng).compose(spec.width);

    std::vector<ColumnInterval> silence;
    int run_start = -1;
    for (int x = 0; x <= spec.width; ++x) {
      bool empty = x < spec.width;
      for (int y = box_top; empty && y <= box_bottom; ++y) empty = !glyphs.at(x, y);
      if (empty && run_start < 0) run_start = x;
      if (!empty && run_start >= 0) {
        silence.push_back({run_start, x - 1});
        run_start = -1;
      }
    }

    for (int i = 0; i < staff.lines; ++i) {
      const int y0 = staff.top + i * (staff.gap + staff.thickness);
      for (int y = y0; y < y0 + staff.thickness; ++y)
        for (int x = 0; x < spec.width; ++x) glyphs.set(x, y, true);
    }
    for (int y = box_top; y <= box_bottom; ++y)
      for (int x = 0; x < spec.width; ++x)
        if (glyphs.at(x, y)) gt.ink.set(x, y, true);

    gt.line_boxes.push_back({std::max(0, box_top - amp), std::min(height - 1, box_bottom + amp)});
    gt.silence.push_back(std::move(silence));
  }

  if (spec.curvature_amplitude != 0.0)
    gt.ink = apply_curvature(gt.ink, spec.curvature_amplitude, spec.curvature_period);
  return {render(gt.ink), std::move(gt)};
}

GrayImage add_gaussian_noise(const GrayImage& img, double level, std::uint64_t seed) {
  require(level >= 0.0 && level <= 1.0, ErrorKind::Argument,
          "noise level must lie in [0,1]");
  if (level == 0.0) return img;
  const double sigma = level * 255.0;
  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  GrayImage out = img;
  for (auto& v : out.data()) {
    const double z = unit(rng);
    v = static_cast<std::uint8_t>(std::clamp(std::lround(v + sigma * z), 0L, 255L));
  }
  return out;
}

GrayImage apply_curvature(const GrayImage& img, double amplitude, double period) {
  return curvature_impl(img, amplitude, period, std::uint8_t{255});
}

BinaryImage apply_curvature(const BinaryImage& mask, double amplitude, double period) {
  return curvature_impl(mask, amplitude, period, false);
}

void write_ground_truth(const SynthGroundTruth& gt, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "page " << gt.width << ' ' << gt.height << '\n';
  for (std::size_t i = 0; i < gt.line_boxes.size(); ++i) {
    out << "line " << gt.line_boxes[i].top << ' ' << gt.line_boxes[i].bottom << " silence";
    if (i < gt.silence.size())
      for (const auto& s : gt.silence[i]) out << ' ' << s.first << '-' << s.last;
    out << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

SynthGroundTruth read_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  SynthGroundTruth gt;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    const auto bad = [&] {
      fail(ErrorKind::Format, path.string() + ":" + std::to_string(lineno) + ": bad record");
    };
    if (tag == "page") {
      if (!(ss >> gt.width >> gt.height)) bad();
    } else if (tag == "line") {
      RowInterval box;
      std::string kw;
      if (!(ss >> box.top >> box.bottom >> kw) || kw != "silence" || box.top > box.bottom) bad();
      std::vector<ColumnInterval> sil;
      std::string tok;
      while (ss >> tok) {
        const auto dash = tok.find('-');
        if (dash == std::string::npos) bad();
        try {
          sil.push_back({std::stoi(tok.substr(0, dash)), std::stoi(tok.substr(dash + 1))});
        } catch (const std::exception&) {
          bad();
        }
      }
      gt.line_boxes.push_back(box);
      gt.silence.push_back(std::move(sil));
    } else {
      bad();
    }
  }
  return gt;
}

std::filesystem::path ground_truth_path(const std::filesystem::path& page) {
  auto p = page;
  p.replace_extension(".gt.txt");
  return p;
}

}  // namespace scoreid
