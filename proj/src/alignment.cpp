#include "scoreid/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "scoreid/binary_io.hpp"
#include "scoreid/error.hpp"
#include "scoreid/parallel.hpp"

namespace scoreid {
namespace {

constexpr std::string_view kGrammarMagic{"SIDGRAM\0", 8};
constexpr std::uint32_t kGrammarVersion = 1;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kMinExit = 0.01;
constexpr double kMaxExit = 0.99;

constexpr ZoneLabel kLabels[2] = {ZoneLabel::WithoutScore, ZoneLabel::Score};

// Runs of one label, each long enough to pass through every state.
std::vector<FrameMatrix> pool_runs(std::span<const FrameMatrix> frames,
                                   std::span<const std::vector<ZoneSegment>> segs, ZoneLabel label,
                                   int min_len) {
  std::vector<FrameMatrix> runs;
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (const auto& s : segs[i])
      if (s.label == label && s.end - s.start + 1 >= min_len)
        runs.push_back(frames[i].middleRows(s.start, s.end - s.start + 1));
  return runs;
}

// Segments per frame spent in the final state under Viterbi, clamped.
double estimate_exit(std::span<const FrameMatrix> runs, const HmmParams& model) {
  double final_frames = 0.0;
  int segments = 0;
  const int last = model.num_states() - 1;
  for (const auto& r : runs) {
    const auto v = viterbi_loglik(r, model);
    if (v.path.empty()) continue;
    ++segments;
    final_frames += static_cast<double>(std::count(v.path.begin(), v.path.end(), last));
  }
  if (segments == 0 || final_frames <= 0) return 0.1;
  return std::clamp(segments / final_frames, kMinExit, kMaxExit);
}

HmmParams train_label(std::span<const FrameMatrix> runs, const HmmParams* start,
                      const ZoneTrainingConfig& cfg) {
  BaumWelchConfig bw;
  bw.iterations = cfg.iterations;
  bw.stage_iterations = cfg.stage_iterations;
  bw.mixture_target = cfg.mixtures;
  HmmParams init = start ? *start : hmm_init_flat(runs, cfg.states);
  return baum_welch(runs, std::move(init), bw).model;
}

std::vector<ZoneAlignment> align_all(std::span<const FrameMatrix> strips, const FillerGrammar& g) {
  std::vector<ZoneAlignment> out(strips.size());
  parallel_for(strips.size(), [&](std::size_t i) { out[i] = forced_align(strips[i], g); });
  return out;
}

}  // namespace

std::string_view to_string(ZoneLabel label) {
  return label == ZoneLabel::Score ? "Score" : "WithoutScore";
}

const HmmParams& FillerGrammar::model(ZoneLabel label) const {
  return label == ZoneLabel::Score ? score : without_score;
}

HmmParams& FillerGrammar::model(ZoneLabel label) {
  return label == ZoneLabel::Score ? score : without_score;
}

double FillerGrammar::exit(ZoneLabel label) const {
  return label == ZoneLabel::Score ? exit_score : exit_without_score;
}

void FillerGrammar::validate() const {
  score.validate();
  without_score.validate();
  require(score.dim() == without_score.dim(), ErrorKind::Argument,
          "zone models differ in feature dimension");
  for (double e : {exit_score, exit_without_score})
    require(e > 0.0 && e < 1.0, ErrorKind::Argument, "zone exit probability must lie in (0,1)");
}

ComposedGrammar compose(const FillerGrammar& grammar) {
  grammar.validate();
  const int s0 = grammar.without_score.num_states(), s1 = grammar.score.num_states();
  const int S = s0 + s1;
  ComposedGrammar c;
  c.score_offset = s0;
  c.state_label.assign(static_cast<std::size_t>(s0), ZoneLabel::WithoutScore);
  c.state_label.resize(static_cast<std::size_t>(S), ZoneLabel::Score);
  auto& t = c.topology;
  t.log_initial = Eigen::VectorXd::Constant(S, kNegInf);
  t.log_transitions = Eigen::MatrixXd::Constant(S, S, kNegInf);
  t.final_states.assign(static_cast<std::size_t>(S), false);

  for (ZoneLabel label : kLabels) {
    const HmmParams& m = grammar.model(label);
    const int off = label == ZoneLabel::Score ? s0 : 0;
    const int other = label == ZoneLabel::Score ? 0 : s0;
    const int n = m.num_states();
    t.log_initial(off) = std::log(0.5);
    for (int i = 0; i + 1 < n; ++i)
      for (int j = 0; j < n; ++j)
        if (m.transitions(i, j) > 0) t.log_transitions(off + i, off + j) = std::log(m.transitions(i, j));
    const double e = grammar.exit(label);
    t.log_transitions(off + n - 1, off + n - 1) = std::log1p(-e);
    t.log_transitions(off + n - 1, other) = std::log(e);
    t.final_states[static_cast<std::size_t>(off + n - 1)] = true;
  }
  return c;
}

ZoneAlignment forced_align(const FrameMatrix& frames, const FillerGrammar& grammar) {
  require(frames.cols() == grammar.dim(), ErrorKind::Argument,
          "frame dimension " + std::to_string(frames.cols()) + " differs from grammar dimension " +
              std::to_string(grammar.dim()));
  require(frames.rows() >= 1, ErrorKind::Alignment, "cannot align an empty sequence");
  const ComposedGrammar c = compose(grammar);
  const Eigen::MatrixXd e0 = emission_log_densities(frames, grammar.without_score);
  const Eigen::MatrixXd e1 = emission_log_densities(frames, grammar.score);
  Eigen::MatrixXd e(frames.rows(), e0.cols() + e1.cols());
  e << e0, e1;

  const ViterbiResult v = viterbi_decode(e, c.topology);
  if (v.path.empty())
    fail(ErrorKind::Alignment, "no admissible zone path for " + std::to_string(frames.rows()) + " frames");
  std::vector<ZoneLabel> labels(v.path.size());
  for (std::size_t t = 0; t < v.path.size(); ++t)
    labels[t] = c.state_label[static_cast<std::size_t>(v.path[t])];
  return {segments_from_labels(labels), v.log_likelihood};
}

std::vector<ZoneSegment> segments_from_labels(std::span<const ZoneLabel> labels) {
  std::vector<ZoneSegment> out;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (out.empty() || out.back().label != labels[t])
      out.push_back({labels[t], static_cast<int>(t), static_cast<int>(t)});
    else
      out.back().end = static_cast<int>(t);
  }
  return out;
}

std::vector<ZoneLabel> labels_from_segments(std::span<const ZoneSegment> segments, int frames) {
  std::vector<ZoneLabel> out(static_cast<std::size_t>(frames), ZoneLabel::WithoutScore);
  for (const auto& s : segments)
    for (int t = std::max(s.start, 0); t <= std::min(s.end, frames - 1); ++t)
      out[static_cast<std::size_t>(t)] = s.label;
  return out;
}

bool is_valid_alignment(const ZoneAlignment& a, int frames) {
  if (a.segments.empty()) return frames == 0;
  int next = 0;
  for (std::size_t i = 0; i < a.segments.size(); ++i) {
    const auto& s = a.segments[i];
    if (s.start != next || s.end < s.start) return false;
    if (i > 0 && a.segments[i - 1].label == s.label) return false;
    next = s.end + 1;
  }
  return next == frames;
}

FillerGrammar train_grammar(std::span<const LabelledStrip> strips, const ZoneTrainingConfig& cfg) {
  require(!strips.empty(), ErrorKind::Argument, "no labelled strips for zone training");
  require(cfg.states >= 1 && cfg.mixtures >= 1, ErrorKind::Argument,
          "zone states and mixtures must be positive");
  std::vector<FrameMatrix> frames;
  std::vector<std::vector<ZoneSegment>> segs;
  for (const auto& s : strips) {
    require(static_cast<Eigen::Index>(s.labels.size()) == s.frames.rows(), ErrorKind::Argument,
            "label count differs from frame count");
    frames.push_back(s.frames);
    segs.push_back(segments_from_labels(s.labels));
  }
  FillerGrammar g;
  for (ZoneLabel label : kLabels) {
    const auto runs = pool_runs(frames, segs, label, cfg.states);
    if (runs.empty())
      fail(ErrorKind::Training, "no " + std::string(to_string(label)) + " zone of at least " +
                                    std::to_string(cfg.states) + " frames in the training strips");
    g.model(label) = train_label(runs, nullptr, cfg);
    (label == ZoneLabel::Score ? g.exit_score : g.exit_without_score) = estimate_exit(runs, g.model(label));
  }
  g.validate();
  return g;
}

double total_alignment_loglik(std::span<const FrameMatrix> strips, const FillerGrammar& grammar) {
  double total = 0.0;
  for (const auto& a : align_all(strips, grammar)) total += a.log_likelihood;
  return total;
}

RealignResult realign_retrain(std::span<const FrameMatrix> strips, const FillerGrammar& grammar,
                              int rounds, const ZoneTrainingConfig& cfg) {
  require(rounds >= 0, ErrorKind::Argument, "round count must be non-negative");
  RealignResult result;
  result.grammar = grammar;
  if (rounds == 0 || strips.empty()) return result;

  auto aligned = align_all(strips, grammar);
  double current = 0.0;
  for (const auto& a : aligned) current += a.log_likelihood;
  result.trace.push_back(current);

  for (int r = 0; r < rounds; ++r) {
    std::vector<std::vector<ZoneSegment>> segs;
    for (const auto& a : aligned) segs.push_back(a.segments);
    FillerGrammar next = result.grammar;
    for (ZoneLabel label : kLabels) {
      const HmmParams& cur = result.grammar.model(label);
      const auto runs = pool_runs(strips, segs, label, cur.num_states());
      if (runs.empty()) continue;
      ZoneTrainingConfig c = cfg;
      c.mixtures = cur.mixtures();
      next.model(label) = train_label(runs, &cur, c);
      (label == ZoneLabel::Score ? next.exit_score : next.exit_without_score) =
          estimate_exit(runs, next.model(label));
    }
    auto next_aligned = align_all(strips, next);
    double total = 0.0;
    for (const auto& a : next_aligned) total += a.log_likelihood;
    ++result.rounds_run;
    if (total < current - 1e-6) break;
    result.grammar = std::move(next);
    aligned = std::move(next_aligned);
    current = total;
    result.trace.push_back(current);
  }
  return result;
}

void save_grammar(const FillerGrammar& grammar, const std::filesystem::path& path) {
  grammar.validate();
  BinaryWriter w;
  w.magic(kGrammarMagic);
  w.u32(kGrammarVersion);
  w.f64(grammar.exit_without_score);
  w.f64(grammar.exit_score);
  write_hmm(w, grammar.without_score);
  write_hmm(w, grammar.score);
  w.save(path);
}

FillerGrammar load_grammar(const std::filesystem::path& path) {
  auto r = BinaryReader::open(path);
  r.expect_magic(kGrammarMagic);
  if (r.u32() != kGrammarVersion) fail(ErrorKind::Format, "unsupported grammar version in " + path.string());
  FillerGrammar g;
  g.exit_without_score = r.f64();
  g.exit_score = r.f64();
  g.without_score = read_hmm(r);
  g.score = read_hmm(r);
  if (!r.at_end()) fail(ErrorKind::Format, "trailing bytes in " + path.string());
  try {
    g.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Format, "invalid grammar in " + path.string() + ": " + e.what());
  }
  return g;
}

}  // namespace scoreid
