#include "scoreid/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "scoreid/binary_io.hpp"
#include "scoreid/error.hpp"
#include "scoreid/gmm.hpp"
#include "scoreid/image_io.hpp"
#include "scoreid/parallel.hpp"
#include "scoreid/synth.hpp"

namespace scoreid {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr Eigen::Index kMaxTransformFrames = 100000;
constexpr int kSpeckArea = 8;
constexpr double kNoiseSigma = 4.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

ZoneTrainingConfig zone_config(const RunConfig& cfg) {
  ZoneTrainingConfig z;
  z.states = cfg.zone_states;
  z.mixtures = cfg.zone_mixtures;
  z.iterations = cfg.iterations;
  z.stage_iterations = cfg.stage_iterations;
  return z;
}

// Every k-th row so that at most `cap` rows remain.
FrameMatrix subsample(const FrameMatrix& x, Eigen::Index cap) {
  if (x.rows() <= cap) return x;
  const Eigen::Index step = (x.rows() + cap - 1) / cap;
  FrameMatrix out((x.rows() + step - 1) / step, x.cols());
  for (Eigen::Index i = 0, r = 0; i < x.rows(); i += step, ++r) out.row(r) = x.row(i);
  return out;
}

FeatureTransform fit_transform(const std::vector<std::vector<FrameMatrix>>& per_writer, const RunConfig& cfg) {
  std::vector<FrameMatrix> parts;
  std::vector<int> labels;
  for (std::size_t w = 0; w < per_writer.size(); ++w)
    for (const auto& s : per_writer[w]) {
      parts.push_back(s);
      labels.insert(labels.end(), static_cast<std::size_t>(s.rows()), static_cast<int>(w));
    }
  const FrameMatrix pooled = stack_frames(parts);
  const int n = static_cast<int>(pooled.cols());
  switch (cfg.transform) {
    case TransformKind::None:
      return {};
    case TransformKind::Pca:
      return FeatureTransform::from(pca_fit(subsample(pooled, kMaxTransformFrames), std::min(cfg.transform_dim, n)));
    case TransformKind::Fa: {
      if (cfg.transform_dim >= n)
        fail(ErrorKind::Config, "transform-dim " + std::to_string(cfg.transform_dim) +
                                    " must be below the feature dimension " + std::to_string(n) + " for FA");
      return FeatureTransform::from(
          fa_fit(subsample(pooled, kMaxTransformFrames), cfg.transform_dim, cfg.transform_iterations, cfg.seed).model);
    }
    case TransformKind::Lda: {
      // LDA yields at most (writers - 1) directions.
      const int m = std::min(cfg.transform_dim, static_cast<int>(per_writer.size()) - 1);
      return FeatureTransform::from(lda_fit(pooled, labels, m));
    }
  }
  return {};
}

HmmParams train_writer(const std::string& id, const std::vector<FrameMatrix>& seqs, const RunConfig& cfg) {
  if (cfg.model_kind == ModelKind::Gmm) {
    const FrameMatrix pooled = stack_frames(seqs);
    if (pooled.rows() < cfg.mixtures)
      fail(ErrorKind::Training, "writer " + id + " has " + std::to_string(pooled.rows()) +
                                    " usable frames, fewer than " + std::to_string(cfg.mixtures) + " mixtures");
    const int iters = cfg.iterations + cfg.stage_iterations;
    return wrap_as_hmm(gmm_fit(pooled, cfg.mixtures, iters, cfg.seed ^ fnv1a(id)).model);
  }
  std::vector<FrameMatrix> usable;
  for (const auto& s : seqs)
    if (s.rows() >= cfg.states) usable.push_back(s);
  if (usable.empty())
    fail(ErrorKind::Training, "writer " + id + " has no unit with at least " + std::to_string(cfg.states) +
                                  " non-silence frames");
  BaumWelchConfig bw;
  bw.iterations = cfg.iterations;
  bw.stage_iterations = cfg.stage_iterations;
  bw.mixture_target = cfg.mixtures;
  return baum_welch(usable, hmm_init_flat(usable, cfg.states), bw).model;
}

}  // namespace

std::vector<LoadedPage> load_pages(std::span<const ManifestEntry> entries, const RunConfig& cfg) {
  std::vector<LoadedPage> pages(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    LoadedPage& p = pages[i];
    p.entry = entries[i];
    p.image = load_page(p.entry.path);
    if (cfg.noise_level > 0)
      p.image = add_gaussian_noise(p.image, cfg.noise_level,
                                   cfg.seed ^ fnv1a(p.entry.writer_id + "/" + p.entry.page_id));
    const auto gt = ground_truth_path(p.entry.path);
    if (std::filesystem::exists(gt)) p.truth = read_ground_truth(gt).line_boxes;
  });
  return pages;
}

FrameMatrix unit_frames(const GrayImage& unit, const RunConfig& cfg) {
  // Speckle would otherwise drag the staff-thickness estimate to one pixel
  // and push clean columns over the silence budget. Heavier noise clings to
  // the staff lines, out of reach of speck removal, so it is median filtered first.
  const bool noisy = estimate_noise_sigma(unit) > kNoiseSigma;
  const BinaryImage bin = remove_specks(binarize(noisy ? median_filter3(unit) : unit), kSpeckArea);
  const FeatureSequence seq =
      cfg.feature_kind == FeatureKind::Lgh
          ? sliding_lgh(unit, cfg.window)
          : sliding_gabor(unit, cfg.window, GaborParams::for_staff_thickness(estimate_staff_thickness(bin)));
  if (!cfg.silence) return seq.frames;
  return drop_frames(seq, detect_silence(bin, seq)).frames;
}

PageUnits extract_units(const GrayImage& page, const RunConfig& cfg, const FillerGrammar* grammar) {
  PageUnits out;
  std::vector<GrayImage> images;
  if (cfg.mode == Mode::Line) {
    ProjectionParams pp;
    pp.threshold = cfg.seg_threshold;
    pp.min_gap = cfg.seg_min_gap;
    for (const auto& b : segment_lines_projection(page, pp)) {
      out.boxes.push_back(b);
      images.push_back(crop(page, 0, b.top, page.width(), b.height()));
    }
  } else {
    require(grammar != nullptr, ErrorKind::Argument, "block-line mode needs a zone grammar");
    const auto strips = split_strips(page, cfg.strips);
    std::vector<std::vector<LineBox>> found(strips.size());
    std::vector<std::string> diag(strips.size());
    parallel_for(strips.size(), [&](std::size_t i) {
      found[i] = detect_block_lines(strips[i], static_cast<int>(i), *grammar, cfg.window, &diag[i]);
    });
    for (std::size_t i = 0; i < strips.size(); ++i) {
      if (!diag[i].empty()) out.diagnostics.push_back(diag[i]);
      for (const auto& b : found[i]) {
        out.boxes.push_back(b);
        images.push_back(crop(strips[i], 0, b.top, strips[i].width(), b.height()));
      }
    }
  }
  out.frames.resize(images.size());
  std::vector<std::string> errs(images.size());
  parallel_for(images.size(), [&](std::size_t i) {
    try {
      out.frames[i] = unit_frames(images[i], cfg);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Argument) throw;
      errs[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < errs.size(); ++i)
    if (!errs[i].empty()) out.diagnostics.push_back("unit " + std::to_string(i) + ": " + errs[i]);
  return out;
}

std::vector<std::string> Registry::writer_ids() const {
  std::vector<std::string> ids;
  for (const auto& w : writers) ids.push_back(w.writer_id);
  return ids;
}

void StageTimings::add(const std::string& stage, double s) {
  for (auto& [name, v] : seconds)
    if (name == stage) {
      v += s;
      return;
    }
  seconds.emplace_back(stage, s);
}

FillerGrammar train_zone_grammar(std::span<const LoadedPage> pages, const RunConfig& cfg) {
  std::vector<std::vector<LabelledStrip>> per_page(pages.size());
  parallel_for(pages.size(), [&](std::size_t i) {
    if (pages[i].truth) per_page[i] = zone_training_set(pages[i].image, *pages[i].truth, cfg.strips, cfg.window);
  });
  std::vector<LabelledStrip> strips;
  for (auto& p : per_page)
    for (auto& s : p) strips.push_back(std::move(s));
  if (strips.empty())
    fail(ErrorKind::Training, "block-line mode needs ground-truth line boxes for the training pages");
  const ZoneTrainingConfig z = zone_config(cfg);
  FillerGrammar g = train_grammar(strips, z);
  if (cfg.zone_rounds == 0) return g;
  std::vector<FrameMatrix> frames;
  for (const auto& s : strips) frames.push_back(s.frames);
  return realign_retrain(frames, g, cfg.zone_rounds, z).grammar;
}

Registry train_from_units(std::span<const std::string> writer_of, std::span<const PageUnits> units,
                          const RunConfig& cfg, std::optional<FillerGrammar> grammar, StageTimings* timings) {
  require(writer_of.size() == units.size(), ErrorKind::Argument, "writer list and unit list differ in length");
  cfg.validate();
  std::vector<std::string> ids(writer_of.begin(), writer_of.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  require(!ids.empty(), ErrorKind::Argument, "no training pages");
  for (const auto& id : ids)
    require(!id.empty() && id.find_first_of(" \t\n") == std::string::npos, ErrorKind::Argument,
            "writer id '" + id + "' must be non-empty without whitespace");

  std::vector<std::vector<FrameMatrix>> per_writer(ids.size());
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto w = static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), writer_of[i]) - ids.begin());
    for (const auto& f : units[i].frames)
      if (f.rows() > 0) per_writer[w].push_back(f);
  }
  for (std::size_t w = 0; w < ids.size(); ++w)
    if (per_writer[w].empty()) fail(ErrorKind::Training, "writer " + ids[w] + " has no usable frames");

  Registry reg;
  reg.config = cfg;
  reg.grammar = std::move(grammar);

  auto t0 = Clock::now();
  reg.transform = fit_transform(per_writer, cfg);
  if (reg.transform.kind != TransformKind::None)
    for (auto& seqs : per_writer)
      for (auto& s : seqs) s = reg.transform.apply(s);
  if (timings) timings->add("transform", seconds_since(t0));

  t0 = Clock::now();
  reg.writers.resize(ids.size());
  parallel_for(ids.size(), [&](std::size_t w) {
    reg.writers[w] = {ids[w], train_writer(ids[w], per_writer[w], cfg)};
  });
  if (timings) timings->add("train", seconds_since(t0));
  return reg;
}

Registry train_writer_models(std::span<const LoadedPage> pages, const RunConfig& cfg, StageTimings* timings) {
  require(!pages.empty(), ErrorKind::Argument, "no training pages");
  std::optional<FillerGrammar> grammar;
  auto t0 = Clock::now();
  if (cfg.mode == Mode::BlockLine) grammar = train_zone_grammar(pages, cfg);
  if (timings && grammar) timings->add("grammar", seconds_since(t0));

  t0 = Clock::now();
  std::vector<PageUnits> units;
  std::vector<std::string> writer_of;
  for (const auto& p : pages) {
    units.push_back(extract_units(p.image, cfg, grammar ? &*grammar : nullptr));
    writer_of.push_back(p.entry.writer_id);
  }
  if (timings) timings->add("features", seconds_since(t0));
  return train_from_units(writer_of, units, cfg, std::move(grammar), timings);
}

RankedResult rank_scores(std::span<const double> scores, std::span<const std::string> ids) {
  require(scores.size() == ids.size(), ErrorKind::Argument, "score and id counts differ");
  RankedResult r;
  r.scores.assign(scores.begin(), scores.end());
  r.order.resize(scores.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(), [&](int a, int b) {
    const double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return ids[static_cast<std::size_t>(a)] < ids[static_cast<std::size_t>(b)];
  });
  r.rank.resize(scores.size());
  for (std::size_t k = 0; k < r.order.size(); ++k) r.rank[static_cast<std::size_t>(r.order[k])] = static_cast<int>(k) + 1;
  return r;
}

std::vector<double> line_probabilities(std::span<const double> ll, int frames) {
  require(!ll.empty(), ErrorKind::Argument, "no scores");
  require(frames >= 1, ErrorKind::Argument, "frame count must be positive");
  const double top = *std::max_element(ll.begin(), ll.end());
  require(top > kNegInf, ErrorKind::Score, "no writer model admits the line");
  std::vector<double> p(ll.size());
  for (std::size_t i = 0; i < ll.size(); ++i) p[i] = std::exp((ll[i] - top) / frames);
  return p;
}

LineScore score_frames(const FrameMatrix& frames, const Registry& registry) {
  require(registry.size() > 0, ErrorKind::Argument, "empty registry");
  const FrameMatrix x = registry.transform.apply(frames);
  int states = 1;
  for (const auto& w : registry.writers) states = std::max(states, w.hmm.num_states());
  if (x.rows() < states)
    fail(ErrorKind::Score, "unit has " + std::to_string(x.rows()) + " non-silence frames, fewer than " +
                               std::to_string(states) + " model states");
  LineScore s;
  s.frames = static_cast<int>(x.rows());
  s.log_likelihood.resize(registry.writers.size());
  for (std::size_t w = 0; w < registry.writers.size(); ++w)
    s.log_likelihood[w] = viterbi_loglik(x, registry.writers[w].hmm).log_likelihood;
  s.probability = line_probabilities(s.log_likelihood, s.frames);
  return s;
}

LineScore score_line(const GrayImage& line, const Registry& registry) {
  return score_frames(unit_frames(line, registry.config), registry);
}

FusedResult fuse_page(std::span<const LineScore> lines, const WeightFunction& fn, std::span<const std::string> ids) {
  require(!lines.empty(), ErrorKind::Argument, "cannot fuse an empty list of line scores");
  const int n = static_cast<int>(ids.size());
  FusedResult out;
  out.fused.assign(ids.size(), 0.0);
  for (const auto& line : lines) {
    require(line.probability.size() == ids.size(), ErrorKind::Argument, "line score size differs from writer count");
    const RankedResult r = rank_scores(line.probability, ids);
    for (std::size_t i = 0; i < ids.size(); ++i) out.fused[i] += weight(r.rank[i], n, fn) * line.probability[i];
  }
  out.ranking = rank_scores(out.fused, ids);
  return out;
}

PageResult identify_units(const PageUnits& units, const Registry& registry, const WeightFunction& fn) {
  PageResult result;
  result.diagnostics = units.diagnostics;
  const auto ids = registry.writer_ids();
  std::vector<std::optional<LineScore>> scores(units.frames.size());
  std::vector<std::string> errs(units.frames.size());
  parallel_for(units.frames.size(), [&](std::size_t i) {
    try {
      if (units.frames[i].rows() == 0) fail(ErrorKind::Score, "unit has no non-silence frames");
      scores[i] = score_frames(units.frames[i], registry);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Score) throw;
      errs[i] = e.what();
    }
  });
  std::vector<LineScore> kept;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!scores[i]) {
      result.diagnostics.push_back("skipped unit " + std::to_string(i) + ": " + errs[i]);
      continue;
    }
    result.units.push_back({units.boxes[i], *scores[i], rank_scores(scores[i]->probability, ids)});
    kept.push_back(*scores[i]);
  }
  if (kept.empty()) fail(ErrorKind::Identification, "page has no scorable unit");
  result.page = fuse_page(kept, fn, ids);
  return result;
}

PageResult identify_page(const GrayImage& page, const Registry& registry, const WeightFunction& fn) {
  const FillerGrammar* g = registry.grammar ? &*registry.grammar : nullptr;
  return identify_units(extract_units(page, registry.config, g), registry, fn);
}

void write_identification(std::ostream& out, const PageResult& result, const Registry& registry) {
  const auto ids = registry.writer_ids();
  out << "writers";
  for (const auto& id : ids) out << ' ' << id;
  out << '\n';
  for (std::size_t u = 0; u < result.units.size(); ++u) {
    const auto& r = result.units[u];
    out << "unit " << u << ' ';
    if (r.box.strip < 0) out << "page";
    else out << "strip " << r.box.strip;
    out << ' ' << r.box.top << ' ' << r.box.bottom << " frames " << r.score.frames << " best "
        << ids[static_cast<std::size_t>(r.ranking.order.front())] << " probability";
    for (double p : r.score.probability) out << ' ' << fixed(p);
    out << '\n';
  }
  out << "page best " << ids[static_cast<std::size_t>(result.page.ranking.order.front())] << " ranking";
  for (int w : result.page.ranking.order) out << ' ' << ids[static_cast<std::size_t>(w)];
  out << " fused";
  for (double f : result.page.fused) out << ' ' << fixed(f);
  out << '\n';
}

void save_registry(const Registry& registry, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream txt;
  txt << "scoreid-registry 1\n";
  txt << "config-digest " << hex64(registry.digest()) << '\n';
  for (const auto& [k, v] : registry.config.entries()) txt << "config " << k << ' ' << v << '\n';
  if (registry.transform.kind != TransformKind::None) {
    save_transform(registry.transform, dir / "transform.bin");
    txt << "transform " << to_string(registry.transform.kind) << " transform.bin\n";
  } else {
    txt << "transform none\n";
  }
  if (registry.grammar) {
    save_grammar(*registry.grammar, dir / "zones.grammar");
    txt << "grammar zones.grammar\n";
  }
  for (std::size_t w = 0; w < registry.writers.size(); ++w) {
    char name[32];
    std::snprintf(name, sizeof name, "writer-%03zu.hmm", w);
    save_hmm(registry.writers[w].hmm, dir / name);
    txt << "writer " << registry.writers[w].writer_id << ' ' << name << '\n';
  }
  std::ofstream out(dir / "registry.txt", std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + (dir / "registry.txt").string());
  out << txt.str();
}

Registry load_registry(const std::filesystem::path& dir) {
  const auto index = dir / "registry.txt";
  std::ifstream in(index);
  if (!in) fail(ErrorKind::Io, "cannot read " + index.string());
  Registry reg;
  std::string line, digest;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    auto bad = [&] { fail(ErrorKind::Format, index.string() + ":" + std::to_string(lineno) + ": malformed record"); };
    if (key.empty()) continue;
    if (key == "scoreid-registry") {
      int version = 0;
      ss >> version;
      if (version != 1) fail(ErrorKind::Format, "unsupported registry version in " + index.string());
    } else if (key == "config-digest") {
      ss >> digest;
    } else if (key == "config") {
      std::string k, v;
      if (!(ss >> k >> v)) bad();
      reg.config.set(k, v);
    } else if (key == "transform") {
      std::string kind, file;
      ss >> kind;
      if (kind != "none") {
        if (!(ss >> file)) bad();
        reg.transform = load_transform(dir / file);
      }
    } else if (key == "grammar") {
      std::string file;
      if (!(ss >> file)) bad();
      reg.grammar = load_grammar(dir / file);
    } else if (key == "writer") {
      std::string id, file;
      if (!(ss >> id >> file)) bad();
      reg.writers.push_back({id, load_hmm(dir / file)});
    } else {
      bad();
    }
  }
  if (digest != hex64(reg.digest()))
    fail(ErrorKind::Format, "registry digest " + digest + " does not match its recorded configuration");
  if (reg.writers.empty()) fail(ErrorKind::Format, "registry " + dir.string() + " lists no writers");
  const int dim = reg.writers.front().hmm.dim();
  for (const auto& w : reg.writers)
    if (w.hmm.dim() != dim) fail(ErrorKind::Format, "writer models in " + dir.string() + " differ in dimension");
  if (reg.config.mode == Mode::BlockLine && !reg.grammar)
    fail(ErrorKind::Format, "block-line registry " + dir.string() + " has no zone grammar");
  if (!std::is_sorted(reg.writers.begin(), reg.writers.end(),
                      [](const WriterModel& a, const WriterModel& b) { return a.writer_id < b.writer_id; }))
    fail(ErrorKind::Format, "registry writers are not sorted by id");
  return reg;
}

double weight(int rank, int writers, const WeightFunction& fn) {
  require(writers >= 1 && rank >= 1 && rank <= writers, ErrorKind::Argument,
          "rank " + std::to_string(rank) + " outside [1, " + std::to_string(writers) + "]");
  switch (fn.kind) {
    case WeightKind::Uniform: return fn.uniform_k;
    case WeightKind::InvertedDistance: return static_cast<double>(writers) / rank;
    case WeightKind::InvertedDistanceSquared: return static_cast<double>(writers) / (static_cast<double>(rank) * rank);
    case WeightKind::ExponentialDecay: return std::exp(-fn.decay * rank);
  }
  return 0.0;
}

std::string_view to_string(WeightKind kind) {
  switch (kind) {
    case WeightKind::Uniform: return "uniform";
    case WeightKind::InvertedDistance: return "inverted-distance";
    case WeightKind::InvertedDistanceSquared: return "inverted-distance-squared";
    case WeightKind::ExponentialDecay: return "exponential-decay";
  }
  return "uniform";
}

WeightKind parse_weight_kind(std::string_view name) {
  for (auto k : {WeightKind::Uniform, WeightKind::InvertedDistance, WeightKind::InvertedDistanceSquared,
                 WeightKind::ExponentialDecay})
    if (name == to_string(k)) return k;
  fail(ErrorKind::Config, "unknown weight function '" + std::string(name) + "'");
}

}  // namespace scoreid
