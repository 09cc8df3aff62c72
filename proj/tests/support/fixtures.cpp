#include "fixtures.hpp"

#include <cstdio>

#include "scoreid/binary_io.hpp"
#include "scoreid/error.hpp"
#include "scoreid/image.hpp"
#include "scoreid/segmentation.hpp"

namespace fixture {

using namespace scoreid;

std::uint64_t style_seed(std::uint64_t seed, int w) {
  char wid[16];
  std::snprintf(wid, sizeof wid, "w-%02d", w + 1);
  return seed ^ fnv1a(std::string("style/") + wid);
}

std::vector<LoadedPage> synthetic_pages(int writers, int pages, const SynthPageSpec& spec, std::uint64_t seed) {
  std::vector<LoadedPage> out;
  for (int w = 0; w < writers; ++w) {
    char wid[16];
    std::snprintf(wid, sizeof wid, "w-%02d", w + 1);
    for (int p = 0; p < pages; ++p) {
      char pid[16];
      std::snprintf(pid, sizeof pid, "p%03d", p + 1);
      SynthPageSpec s = spec;
      s.style_seed = style_seed(seed, w);
      auto [img, gt] = generate_page(s, seed ^ fnv1a(std::string("page/") + wid + "/" + pid));
      LoadedPage page;
      page.entry = {wid, pid, {}};
      page.image = std::move(img);
      page.truth = gt.line_boxes;
      out.push_back(std::move(page));
    }
  }
  return out;
}

StripScore score_strips(const std::vector<LoadedPage>& pages, const FillerGrammar& grammar, const RunConfig& cfg) {
  StripScore score;
  for (const auto& page : pages) {
    const auto strips = split_strips(page.image, cfg.strips);
    for (std::size_t i = 0; i < strips.size(); ++i) {
      const FeatureSequence seq = extract_strip_frames(strips[i], cfg.window);
      const auto truth = label_frames(seq, *page.truth);
      int zones = 0;
      std::vector<ZoneLabel> got(truth.size(), ZoneLabel::WithoutScore);
      try {
        const ZoneAlignment a = forced_align(seq.frames, grammar);
        got = labels_from_segments(a.segments, seq.length());
        for (const auto& s : a.segments) zones += s.label == ZoneLabel::Score;
      } catch (const scoreid::Error&) {
        zones = -1;
      }
      for (std::size_t t = 0; t < truth.size(); ++t) score.correct_frames += got[t] == truth[t];
      score.frames += static_cast<int>(truth.size());
      ++score.strips;
      score.exact_zone_counts += zones == static_cast<int>(page.truth->size());
    }
  }
  return score;
}

}  // namespace fixture
