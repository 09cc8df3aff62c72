#pragma once

#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "scoreid/hmm.hpp"

namespace scoreid {

enum class ZoneLabel { WithoutScore = 0, Score = 1 };

std::string_view to_string(ZoneLabel label);

struct ZoneSegment {
  ZoneLabel label = ZoneLabel::WithoutScore;
  int start = 0;
  int end = 0;  // inclusive
  friend bool operator==(const ZoneSegment&, const ZoneSegment&) = default;
};

/// Contiguous segments covering [0, T-1]; neighbours carry different labels.
struct ZoneAlignment {
  std::vector<ZoneSegment> segments;
  double log_likelihood = 0.0;
};

/// Two zone HMMs joined in a loop. From the last state of either label the
/// path stays with probability 1 - exit or moves to the first state of the
/// other label. Either label may open or close the sequence.
struct FillerGrammar {
  HmmParams without_score;
  HmmParams score;
  double exit_without_score = 0.1;
  double exit_score = 0.1;

  const HmmParams& model(ZoneLabel label) const;
  HmmParams& model(ZoneLabel label);
  double exit(ZoneLabel label) const;
  int dim() const noexcept { return score.dim(); }
  void validate() const;
};

/// The combined trellis: WithoutScore states first, then Score states.
struct ComposedGrammar {
  LogTopology topology;
  std::vector<ZoneLabel> state_label;
  int score_offset = 0;
};

ComposedGrammar compose(const FillerGrammar& grammar);

/// Viterbi over the composed grammar. Every segment lasts at least as many
/// frames as its label model has states. Throws Alignment when no path exists.
ZoneAlignment forced_align(const FrameMatrix& frames, const FillerGrammar& grammar);

/// Collapses per-frame labels into maximal runs.
std::vector<ZoneSegment> segments_from_labels(std::span<const ZoneLabel> labels);
std::vector<ZoneLabel> labels_from_segments(std::span<const ZoneSegment> segments, int frames);
bool is_valid_alignment(const ZoneAlignment& a, int frames);

struct ZoneTrainingConfig {
  int states = 3;
  int mixtures = 4;
  int iterations = 10;
  int stage_iterations = 5;
};

struct LabelledStrip {
  FrameMatrix frames;
  std::vector<ZoneLabel> labels;  // one per frame
};

/// Flat start plus Baum-Welch for each label on its pooled runs, then the
/// exit probabilities from the training segmentation.
FillerGrammar train_grammar(std::span<const LabelledStrip> strips, const ZoneTrainingConfig& cfg);

struct RealignResult {
  FillerGrammar grammar;
  /// Total alignment log-likelihood of every accepted grammar, starting with
  /// the input one.
  std::vector<double> trace;
  int rounds_run = 0;
};

/// Each round aligns all strips, re-pools frames per label and retrains both
/// label models from their current parameters. A round that would lower the
/// total alignment log-likelihood is discarded and iteration stops.
RealignResult realign_retrain(std::span<const FrameMatrix> strips, const FillerGrammar& grammar,
                              int rounds, const ZoneTrainingConfig& cfg);

/// Sum of forced-alignment log-likelihoods.
double total_alignment_loglik(std::span<const FrameMatrix> strips, const FillerGrammar& grammar);

void save_grammar(const FillerGrammar& grammar, const std::filesystem::path& path);
FillerGrammar load_grammar(const std::filesystem::path& path);

}  // namespace scoreid
