#pragma once

// Synthetic data shared by the unit and acceptance tests.

#include <cstdint>
#include <vector>

#include "scoreid/alignment.hpp"
#include "scoreid/config.hpp"
#include "scoreid/pipeline.hpp"
#include "scoreid/synth.hpp"

namespace fixture {

/// In-memory pages for `writers` writers (ids w-01, ...), page content seeded
/// from `seed`, with ground-truth boxes attached.
std::vector<scoreid::LoadedPage> synthetic_pages(int writers, int pages, const scoreid::SynthPageSpec& spec,
                                                 std::uint64_t seed);

/// Style seed of writer `w` (0-based) for corpus seed `seed`, matching
/// write_synthetic_corpus.
std::uint64_t style_seed(std::uint64_t seed, int w);

struct StripScore {
  int frames = 0;
  int correct_frames = 0;
  int strips = 0;
  int exact_zone_counts = 0;

  double frame_accuracy() const { return frames ? 100.0 * correct_frames / frames : 0.0; }
  double zone_exactness() const { return strips ? 100.0 * exact_zone_counts / strips : 0.0; }
};

/// Aligns every strip of `pages` with `grammar` and compares the frame labels
/// and the Score segment count with the ground truth.
StripScore score_strips(const std::vector<scoreid::LoadedPage>& pages, const scoreid::FillerGrammar& grammar,
                        const scoreid::RunConfig& cfg);

}  // namespace fixture
