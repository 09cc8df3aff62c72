#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scoreid/alignment.hpp"
#include "scoreid/config.hpp"
#include "scoreid/dimred.hpp"
#include "scoreid/hmm.hpp"
#include "scoreid/segmentation.hpp"
#include "scoreid/weights.hpp"

namespace scoreid {

struct ManifestEntry {
  std::string writer_id;
  std::string page_id;
  std::filesystem::path path;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// A decoded page plus its ground-truth line boxes when a sidecar exists.
struct LoadedPage {
  ManifestEntry entry;
  GrayImage image;
  std::optional<std::vector<RowInterval>> truth;
};

/// Loads pages in parallel. A non-zero noise level in `cfg` degrades each page
/// with a seed derived from the run seed and the writer and page ids.
std::vector<LoadedPage> load_pages(std::span<const ManifestEntry> entries, const RunConfig& cfg);

/// Scoring units of one page with their frames: features for the configured
/// kind, silence frames dropped when enabled, no transform yet.
struct PageUnits {
  std::vector<LineBox> boxes;
  std::vector<FrameMatrix> frames;
  std::vector<std::string> diagnostics;
};

/// Line mode: projection segmentation. Block-line mode: strips, each
/// segmented by forced alignment with `grammar`, which must then be given.
PageUnits extract_units(const GrayImage& page, const RunConfig& cfg, const FillerGrammar* grammar);

/// Frames of one unit image (a line or a block-line).
FrameMatrix unit_frames(const GrayImage& unit, const RunConfig& cfg);

struct WriterModel {
  std::string writer_id;
  HmmParams hmm;  // a GMM writer model is stored as a one-state HMM
};

/// Writer models sharing one feature configuration and transform, sorted by
/// writer id.
struct Registry {
  RunConfig config;
  FeatureTransform transform;
  std::optional<FillerGrammar> grammar;
  std::vector<WriterModel> writers;

  std::uint64_t digest() const { return config.digest(); }
  int size() const noexcept { return static_cast<int>(writers.size()); }
  std::vector<std::string> writer_ids() const;
};

/// Directory layout: registry.txt, one model file per writer, and the
/// transform and grammar files when present.
void save_registry(const Registry& registry, const std::filesystem::path& dir);
Registry load_registry(const std::filesystem::path& dir);

struct StageTimings {
  std::vector<std::pair<std::string, double>> seconds;  // in execution order
  void add(const std::string& stage, double s);
};

/// Zone grammar from the ground-truth boxes of the given pages, refined by
/// realignment rounds.
FillerGrammar train_zone_grammar(std::span<const LoadedPage> pages, const RunConfig& cfg);

/// Per writer: pool unit frames, fit the optional transform on all writers'
/// frames, then flat start and Baum-Welch (or a GMM fit). `writer_of[i]`
/// names the writer of `units[i]`.
Registry train_from_units(std::span<const std::string> writer_of, std::span<const PageUnits> units,
                          const RunConfig& cfg, std::optional<FillerGrammar> grammar,
                          StageTimings* timings = nullptr);

/// End to end from decoded pages, grammar included in block-line mode.
Registry train_writer_models(std::span<const LoadedPage> pages, const RunConfig& cfg,
                             StageTimings* timings = nullptr);

/// Writer indices ordered by descending score; ties go to the smaller writer
/// id. `rank[i]` is 1 for the best writer.
struct RankedResult {
  std::vector<int> order;
  std::vector<int> rank;
  std::vector<double> scores;
};

RankedResult rank_scores(std::span<const double> scores, std::span<const std::string> ids);

struct LineScore {
  std::vector<double> log_likelihood;  // per writer, Viterbi
  int frames = 0;
  std::vector<double> probability;  // max-normalised, max = 1
};

/// P_i = exp((S_i - S_max) / T): a softmax over length-normalised scores
/// divided by its maximum.
std::vector<double> line_probabilities(std::span<const double> log_likelihood, int frames);

/// Applies the registry transform and scores frames under every writer.
/// Fewer frames than model states is a score error.
LineScore score_frames(const FrameMatrix& frames, const Registry& registry);
LineScore score_line(const GrayImage& line, const Registry& registry);

/// F_i = sum_j W(rank_ij) P_ij over lines j. Empty input is an argument error.
struct FusedResult {
  std::vector<double> fused;
  RankedResult ranking;
};
FusedResult fuse_page(std::span<const LineScore> lines, const WeightFunction& fn,
                      std::span<const std::string> ids);

struct UnitResult {
  LineBox box;
  LineScore score;
  RankedResult ranking;
};

struct PageResult {
  std::vector<UnitResult> units;
  FusedResult page;
  std::vector<std::string> diagnostics;
};

/// Scores every unit, skipping unscorable ones with a diagnostic, and fuses.
/// No scorable unit is an identification error.
PageResult identify_units(const PageUnits& units, const Registry& registry, const WeightFunction& fn);
PageResult identify_page(const GrayImage& page, const Registry& registry, const WeightFunction& fn);

/// Machine-readable identification report: one `unit` line per scored unit
/// with the full probability vector, then the page block.
void write_identification(std::ostream& out, const PageResult& result, const Registry& registry);

}  // namespace scoreid
