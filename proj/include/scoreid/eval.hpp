#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scoreid/config.hpp"
#include "scoreid/pipeline.hpp"
#include "scoreid/synth.hpp"

namespace scoreid {

/// `writer-id <tab> page-id <tab> path` per line. Relative paths resolve
/// against the manifest's directory; `#` lines are comments.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries,
                    std::string_view comment = {});

/// Writer folders (`w-01`, ...) under `root`; pages are the PNG/PGM files in
/// the folder's `image` subdirectory when present, else in the folder itself.
std::vector<ManifestEntry> import_muscima(const std::filesystem::path& root);

/// Synthetic corpus under `dir`: writer folders `w-01`, ... holding pages
/// `p001.png`, ... with ground-truth sidecars, plus `manifest.tsv`. Writer
/// styles and page content derive from `seed`; a non-zero noise level
/// degrades the written pages.
std::vector<ManifestEntry> write_synthetic_corpus(const std::filesystem::path& dir, int writers, int pages,
                                                  const SynthPageSpec& spec, std::uint64_t seed,
                                                  double noise_level = 0.0);

/// Indices into the manifest, sorted.
struct FoldSplit {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
};

struct FoldPlan {
  int folds = 0;
  std::uint64_t seed = 0;
  std::vector<FoldSplit> splits;
};

/// Stratified by writer. Each writer's pages are shuffled with the seed and
/// dealt into `folds` groups; fold f tests group f, validates on group f+1
/// and trains on the rest. Two folds leave validation empty; one fold is a
/// single 8:1:1 split.
FoldPlan make_folds(std::span<const ManifestEntry> entries, int folds, std::uint64_t seed);

/// One identified unit (line, block-line or page) as writer indices.
struct Outcome {
  int truth = 0;
  int predicted = 0;
  int truth_rank = 1;
};

/// Percentage of outcomes whose true writer ranks within the first n.
double top_n_accuracy(std::span<const Outcome> outcomes, int n);

/// 100 (E - O) / E, rounded to 9 decimals. E <= 0 is an argument error.
double error_rate(double expected, double observed);

/// counts[truth][predicted].
std::vector<std::vector<int>> confusion_matrix(std::span<const Outcome> outcomes, int writers);

struct FoldOutcome {
  int fold = 0;
  int grid_point = 0;
  double unit_top1 = 0;
  double page_top1 = 0;
  int units = 0;
  int pages = 0;
};

struct EvalReport {
  std::vector<std::string> writers;
  RunConfig config;
  std::vector<RunConfig> grid;
  std::vector<FoldOutcome> folds;
  std::vector<Outcome> unit_outcomes;
  std::vector<Outcome> page_outcomes;
  std::vector<std::pair<std::string, double>> weight_page_top1;  // pooled, per weight function
  std::vector<std::string> failures;
  StageTimings timings;
  double total_seconds = 0;

  double unit_top1() const;  // mean over folds
  double page_top1() const;
  std::vector<double> unit_top_n() const;  // pooled, N = 1..writers
  std::vector<double> page_top_n() const;
  std::vector<double> writer_error() const;  // per writer, expected 100
  std::vector<std::vector<int>> confusion() const;

  /// Stable text with no timing information; identical runs give identical bytes.
  std::string text() const;
  std::string timings_text() const;
};

/// Fold loop over the manifest. With several grid points, each fold picks the
/// one with the best validation page accuracy before testing. A failing grid
/// point is recorded in `failures` and skipped. Folds, seed and noise level
/// come from the first grid point; noise degrades every page.
EvalReport run_benchmark(std::span<const ManifestEntry> entries, std::span<const RunConfig> grid);

}  // namespace scoreid
