#include "scoreid/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "scoreid/binary_io.hpp"
#include "scoreid/error.hpp"
#include "scoreid/image_io.hpp"
#include "scoreid/parallel.hpp"

namespace scoreid {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

bool is_page_image(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".pgm";
}

std::vector<std::filesystem::path> sorted_children(const std::filesystem::path& dir, bool directories) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> writer_index(std::span<const ManifestEntry> entries, const std::vector<std::string>& writers) {
  std::vector<int> out;
  out.reserve(entries.size());
  for (const auto& e : entries)
    out.push_back(static_cast<int>(std::lower_bound(writers.begin(), writers.end(), e.writer_id) - writers.begin()));
  return out;
}

// Ranking over the registry's writers mapped onto the benchmark's writer list.
Outcome outcome_of(const RankedResult& r, const std::vector<int>& reg_to_global, int truth, int writers) {
  Outcome o;
  o.truth = truth;
  o.predicted = reg_to_global[static_cast<std::size_t>(r.order.front())];
  o.truth_rank = writers + 1;
  for (std::size_t k = 0; k < r.order.size(); ++k)
    if (reg_to_global[static_cast<std::size_t>(r.order[k])] == truth) o.truth_rank = static_cast<int>(k) + 1;
  return o;
}

struct PageEval {
  std::vector<Outcome> units;
  Outcome page;
  std::vector<LineScore> scores;  // scorable units, for re-fusion
};

// Unit frames are a function of the page and the digest alone in line mode,
// so they are shared across folds and grid points with equal digests.
class UnitCache {
 public:
  explicit UnitCache(std::span<const LoadedPage> pages) : pages_(pages) {}

  std::vector<const PageUnits*> get(std::span<const int> idx, const RunConfig& cfg, const FillerGrammar* grammar,
                                    std::vector<PageUnits>& scratch) {
    std::vector<const PageUnits*> out(idx.size());
    if (cfg.mode == Mode::BlockLine) {
      scratch.assign(idx.size(), {});
      parallel_for(idx.size(), [&](std::size_t i) {
        scratch[i] = extract_units(pages_[static_cast<std::size_t>(idx[i])].image, cfg, grammar);
      });
      for (std::size_t i = 0; i < idx.size(); ++i) out[i] = &scratch[i];
      return out;
    }
    auto& slot = cache_[cfg.digest()];
    if (slot.empty()) slot.resize(pages_.size());
    std::vector<std::size_t> missing;
    for (int i : idx)
      if (!slot[static_cast<std::size_t>(i)]) missing.push_back(static_cast<std::size_t>(i));
    std::vector<PageUnits> fresh(missing.size());
    parallel_for(missing.size(), [&](std::size_t k) { fresh[k] = extract_units(pages_[missing[k]].image, cfg, nullptr); });
    for (std::size_t k = 0; k < missing.size(); ++k) slot[missing[k]] = std::move(fresh[k]);
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = &*slot[static_cast<std::size_t>(idx[i])];
    return out;
  }

 private:
  std::span<const LoadedPage> pages_;
  std::unordered_map<std::uint64_t, std::vector<std::optional<PageUnits>>> cache_;
};

struct Trained {
  Registry registry;
  std::vector<int> reg_to_global;
};

Trained train_fold(std::span<const LoadedPage> pages, std::span<const int> train, const RunConfig& cfg,
                   const std::vector<std::string>& writers, UnitCache& cache, StageTimings& timings) {
  std::optional<FillerGrammar> grammar;
  auto t0 = Clock::now();
  if (cfg.mode == Mode::BlockLine) {
    std::vector<LoadedPage> subset;
    for (int i : train) subset.push_back(pages[static_cast<std::size_t>(i)]);
    grammar = train_zone_grammar(subset, cfg);
    timings.add("grammar", seconds_since(t0));
  }
  t0 = Clock::now();
  std::vector<PageUnits> scratch;
  const auto units = cache.get(train, cfg, grammar ? &*grammar : nullptr, scratch);
  std::vector<PageUnits> copies;
  std::vector<std::string> writer_of;
  copies.reserve(units.size());
  for (std::size_t i = 0; i < units.size(); ++i) {
    copies.push_back(*units[i]);
    writer_of.push_back(pages[static_cast<std::size_t>(train[i])].entry.writer_id);
  }
  timings.add("features", seconds_since(t0));
  Trained t;
  t.registry = train_from_units(writer_of, copies, cfg, std::move(grammar), &timings);
  for (const auto& id : t.registry.writer_ids())
    t.reg_to_global.push_back(static_cast<int>(std::lower_bound(writers.begin(), writers.end(), id) - writers.begin()));
  return t;
}

std::vector<PageEval> evaluate_pages(std::span<const int> idx,
                                     std::span<const int> truth, const Trained& t, const std::vector<std::string>& writers,
                                     UnitCache& cache, StageTimings& timings) {
  const Registry& reg = t.registry;
  auto t0 = Clock::now();
  std::vector<PageUnits> scratch;
  const auto units = cache.get(idx, reg.config, reg.grammar ? &*reg.grammar : nullptr, scratch);
  timings.add("features", seconds_since(t0));

  t0 = Clock::now();
  const int w = static_cast<int>(writers.size());
  std::vector<PageEval> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const int tr = truth[static_cast<std::size_t>(idx[i])];
    PageEval& pe = out[i];
    try {
      const PageResult r = identify_units(*units[i], reg, reg.config.weight);
      for (const auto& u : r.units) {
        pe.units.push_back(outcome_of(u.ranking, t.reg_to_global, tr, w));
        pe.scores.push_back(u.score);
      }
      pe.page = outcome_of(r.page.ranking, t.reg_to_global, tr, w);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Identification) throw;
      pe.page = {tr, -1, w + 1};
    }
  }
  timings.add("identify", seconds_since(t0));
  return out;
}

double page_accuracy(const std::vector<PageEval>& evals) {
  std::vector<Outcome> o;
  for (const auto& e : evals) o.push_back(e.page);
  return top_n_accuracy(o, 1);
}

std::string describe(const Error& e) { return std::string(to_string(e.kind())) + ": " + e.what(); }

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos || line.find('\t', b + 1) != std::string::npos)
      fail(ErrorKind::Format, path.string() + ":" + std::to_string(lineno) + ": expected three tab-separated fields");
    ManifestEntry e{line.substr(0, a), line.substr(a + 1, b - a - 1), line.substr(b + 1)};
    if (e.writer_id.empty() || e.page_id.empty() || e.path.empty() ||
        e.writer_id.find_first_of(" \t") != std::string::npos)
      fail(ErrorKind::Format, path.string() + ":" + std::to_string(lineno) + ": empty or malformed field");
    if (e.path.is_relative()) e.path = base / e.path;
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries,
                    std::string_view comment) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write manifest " + path.string());
  if (!comment.empty()) out << "# " << comment << '\n';
  const auto base = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  for (const auto& e : entries) {
    std::filesystem::path p = e.path;
    if (p.is_absolute()) {
      std::error_code ec;
      const auto rel = std::filesystem::relative(p, std::filesystem::absolute(base), ec);
      if (!ec && !rel.empty() && *rel.begin() != "..") p = rel;
    }
    out << e.writer_id << '\t' << e.page_id << '\t' << p.generic_string() << '\n';
  }
}

std::vector<ManifestEntry> import_muscima(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) fail(ErrorKind::Io, "not a directory: " + root.string());
  std::vector<ManifestEntry> out;
  for (const auto& dir : sorted_children(root, true)) {
    const std::string name = dir.filename().string();
    if (name.size() < 3 || name.compare(0, 2, "w-") != 0) continue;
    const auto image_dir = std::filesystem::is_directory(dir / "image") ? dir / "image" : dir;
    for (const auto& f : sorted_children(image_dir, false))
      if (is_page_image(f)) out.push_back({name, f.stem().string(), std::filesystem::absolute(f)});
  }
  if (out.empty()) fail(ErrorKind::Data, "no writer folders with page images under " + root.string());
  return out;
}

std::vector<ManifestEntry> write_synthetic_corpus(const std::filesystem::path& dir, int writers, int pages,
                                                  const SynthPageSpec& spec, std::uint64_t seed, double noise_level) {
  require(writers >= 1 && writers <= 99, ErrorKind::Argument, "writer count must lie in [1, 99]");
  require(pages >= 1 && pages <= 999, ErrorKind::Argument, "page count must lie in [1, 999]");
  require(noise_level >= 0 && noise_level <= 1, ErrorKind::Argument, "noise level must lie in [0, 1]");
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (int w = 0; w < writers; ++w) {
    char wid[16];
    std::snprintf(wid, sizeof wid, "w-%02d", w + 1);
    for (int p = 0; p < pages; ++p) {
      char pid[16];
      std::snprintf(pid, sizeof pid, "p%03d", p + 1);
      entries.push_back({wid, pid, std::filesystem::path(wid) / (std::string(pid) + ".png")});
    }
  }
  parallel_for(entries.size(), [&](std::size_t i) {
    const auto& e = entries[i];
    SynthPageSpec s = spec;
    s.style_seed = seed ^ fnv1a("style/" + e.writer_id);
    auto [img, gt] = generate_page(s, seed ^ fnv1a("page/" + e.writer_id + "/" + e.page_id));
    if (noise_level > 0)
      img = add_gaussian_noise(img, noise_level, seed ^ fnv1a("noise/" + e.writer_id + "/" + e.page_id));
    const auto path = dir / e.path;
    std::filesystem::create_directories(path.parent_path());
    save_png(img, path);
    write_ground_truth(gt, ground_truth_path(path));
  });
  write_manifest(dir / "manifest.tsv", entries, "scoreid synth seed " + std::to_string(seed));
  for (auto& e : entries) e.path = dir / e.path;
  return entries;
}

FoldPlan make_folds(std::span<const ManifestEntry> entries, int folds, std::uint64_t seed) {
  require(folds >= 1, ErrorKind::Argument, "folds must be at least 1");
  std::vector<std::string> writers;
  for (const auto& e : entries) writers.push_back(e.writer_id);
  std::sort(writers.begin(), writers.end());
  writers.erase(std::unique(writers.begin(), writers.end()), writers.end());
  require(!writers.empty(), ErrorKind::Data, "empty manifest");
  const auto widx = writer_index(entries, writers);

  FoldPlan plan;
  plan.folds = folds;
  plan.seed = seed;
  plan.splits.resize(static_cast<std::size_t>(folds));
  for (std::size_t w = 0; w < writers.size(); ++w) {
    std::vector<int> pages;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (widx[i] == static_cast<int>(w)) pages.push_back(static_cast<int>(i));
    if (static_cast<int>(pages.size()) < folds)
      fail(ErrorKind::Data, "writer " + writers[w] + " has " + std::to_string(pages.size()) + " pages, fewer than " +
                                std::to_string(folds) + " folds");
    std::mt19937_64 rng(seed ^ fnv1a(writers[w]));
    std::shuffle(pages.begin(), pages.end(), rng);

    if (folds == 1) {
      const int n = static_cast<int>(pages.size());
      const int n_test = n >= 2 ? std::max(1, n / 10) : 0;
      const int n_val = n - n_test >= 2 ? n / 10 : 0;
      auto& s = plan.splits[0];
      for (int k = 0; k < n; ++k) {
        const int p = pages[static_cast<std::size_t>(k)];
        if (k < n_test) s.test.push_back(p);
        else if (k < n_test + n_val) s.validation.push_back(p);
        else s.train.push_back(p);
      }
      continue;
    }
    for (int f = 0; f < folds; ++f) {
      auto& s = plan.splits[static_cast<std::size_t>(f)];
      for (std::size_t k = 0; k < pages.size(); ++k) {
        const int group = static_cast<int>(k % static_cast<std::size_t>(folds));
        if (group == f) s.test.push_back(pages[k]);
        else if (folds > 2 && group == (f + 1) % folds) s.validation.push_back(pages[k]);
        else s.train.push_back(pages[k]);
      }
    }
  }
  for (auto& s : plan.splits) {
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    std::sort(s.test.begin(), s.test.end());
  }
  return plan;
}

double top_n_accuracy(std::span<const Outcome> outcomes, int n) {
  require(n >= 1, ErrorKind::Argument, "top-N needs N >= 1");
  if (outcomes.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& o : outcomes)
    if (o.truth_rank <= n) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

double error_rate(double expected, double observed) {
  require(expected > 0, ErrorKind::Argument, "expected accuracy must be positive");
  return std::round(100.0 * (expected - observed) / expected * 1e9) / 1e9;
}

std::vector<std::vector<int>> confusion_matrix(std::span<const Outcome> outcomes, int writers) {
  require(writers >= 0, ErrorKind::Argument, "negative writer count");
  std::vector<std::vector<int>> m(static_cast<std::size_t>(writers), std::vector<int>(static_cast<std::size_t>(writers), 0));
  for (const auto& o : outcomes) {
    require(o.truth >= 0 && o.truth < writers, ErrorKind::Argument, "true writer index out of range");
    if (o.predicted < 0) continue;  // page without a scorable unit
    require(o.predicted < writers, ErrorKind::Argument, "predicted writer index out of range");
    ++m[static_cast<std::size_t>(o.truth)][static_cast<std::size_t>(o.predicted)];
  }
  return m;
}

double EvalReport::unit_top1() const {
  if (folds.empty()) return 0.0;
  double s = 0;
  for (const auto& f : folds) s += f.unit_top1;
  return s / static_cast<double>(folds.size());
}

double EvalReport::page_top1() const {
  if (folds.empty()) return 0.0;
  double s = 0;
  for (const auto& f : folds) s += f.page_top1;
  return s / static_cast<double>(folds.size());
}

std::vector<double> EvalReport::unit_top_n() const {
  std::vector<double> out;
  for (int n = 1; n <= static_cast<int>(writers.size()); ++n) out.push_back(top_n_accuracy(unit_outcomes, n));
  return out;
}

std::vector<double> EvalReport::page_top_n() const {
  std::vector<double> out;
  for (int n = 1; n <= static_cast<int>(writers.size()); ++n) out.push_back(top_n_accuracy(page_outcomes, n));
  return out;
}

std::vector<double> EvalReport::writer_error() const {
  std::vector<double> out;
  for (int w = 0; w < static_cast<int>(writers.size()); ++w) {
    std::vector<Outcome> mine;
    for (const auto& o : page_outcomes)
      if (o.truth == w) mine.push_back(o);
    out.push_back(mine.empty() ? 0.0 : error_rate(100.0, top_n_accuracy(mine, 1)));
  }
  return out;
}

std::vector<std::vector<int>> EvalReport::confusion() const {
  return confusion_matrix(page_outcomes, static_cast<int>(writers.size()));
}

std::string EvalReport::text() const {
  std::ostringstream o;
  o << "scoreid-evaluation 1\n";
  o << "writers " << writers.size();
  for (const auto& w : writers) o << ' ' << w;
  o << '\n';
  o << "unit-kind " << to_string(config.mode) << '\n';
  o << "config-digest " << hex64(config.digest()) << '\n';
  for (const auto& [k, v] : config.entries()) o << "config " << k << ' ' << v << '\n';
  if (grid.size() > 1)
    for (std::size_t g = 0; g < grid.size(); ++g)
      for (const auto& [k, v] : grid[g].entries())
        if (v != config.get(k)) o << "grid " << g << ' ' << k << ' ' << v << '\n';
  for (const auto& f : folds)
    o << "fold " << f.fold << " grid " << f.grid_point << " units " << f.units << " pages " << f.pages
      << " unit-top1 " << fixed(f.unit_top1) << " page-top1 " << fixed(f.page_top1) << '\n';
  o << "mean unit-top1 " << fixed(unit_top1()) << " page-top1 " << fixed(page_top1()) << '\n';
  const auto ut = unit_top_n(), pt = page_top_n();
  for (std::size_t n = 0; n < ut.size(); ++n)
    o << "top-n " << n + 1 << " unit " << fixed(ut[n]) << " page " << fixed(pt[n]) << '\n';
  for (const auto& [name, acc] : weight_page_top1) o << "weight " << name << " page-top1 " << fixed(acc) << '\n';
  const auto err = writer_error();
  for (std::size_t w = 0; w < writers.size(); ++w) o << "writer-error " << writers[w] << ' ' << fixed(err[w]) << '\n';
  const auto cm = confusion();
  for (std::size_t w = 0; w < writers.size(); ++w) {
    o << "confusion " << writers[w];
    for (int c : cm[w]) o << ' ' << c;
    o << '\n';
  }
  for (const auto& f : failures) o << "failure " << f << '\n';
  return o.str();
}

std::string EvalReport::timings_text() const {
  std::ostringstream o;
  for (const auto& [stage, s] : timings.seconds) o << "stage " << stage << ' ' << fixed(s) << '\n';
  o << "total " << fixed(total_seconds) << '\n';
  return o.str();
}

EvalReport run_benchmark(std::span<const ManifestEntry> entries, std::span<const RunConfig> grid) {
  require(!grid.empty(), ErrorKind::Argument, "empty configuration grid");
  for (const auto& g : grid) g.validate();
  const auto start = Clock::now();

  EvalReport report;
  report.config = grid.front();
  report.grid.assign(grid.begin(), grid.end());
  for (const auto& e : entries) report.writers.push_back(e.writer_id);
  std::sort(report.writers.begin(), report.writers.end());
  report.writers.erase(std::unique(report.writers.begin(), report.writers.end()), report.writers.end());
  const auto& writers = report.writers;
  const auto truth = writer_index(entries, writers);

  // Folds, seed and noise come from the first grid point.
  const RunConfig& base = grid.front();
  const FoldPlan plan = make_folds(entries, base.folds, base.seed);

  auto t0 = Clock::now();
  const auto pages = load_pages(entries, base);
  report.timings.add("load", seconds_since(t0));
  UnitCache cache(pages);

  constexpr WeightKind kWeights[] = {WeightKind::Uniform, WeightKind::InvertedDistance,
                                     WeightKind::InvertedDistanceSquared, WeightKind::ExponentialDecay};
  std::vector<std::vector<Outcome>> by_weight(std::size(kWeights));

  for (std::size_t f = 0; f < plan.splits.size(); ++f) {
    const FoldSplit& split = plan.splits[f];
    if (split.test.empty()) continue;
    std::optional<Trained> best;
    int best_g = -1;
    double best_acc = -1;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      try {
        Trained t = train_fold(pages, split.train, grid[g], writers, cache, report.timings);
        double acc = 0;
        if (grid.size() > 1 && !split.validation.empty())
          acc = page_accuracy(evaluate_pages(split.validation, truth, t, writers, cache, report.timings));
        if (acc > best_acc) {
          best_acc = acc;
          best_g = static_cast<int>(g);
          best = std::move(t);
        }
      } catch (const Error& e) {
        report.failures.push_back("fold " + std::to_string(f) + " grid " + std::to_string(g) + " " + describe(e));
      }
    }
    if (!best) continue;

    std::vector<PageEval> evals;
    try {
      evals = evaluate_pages(split.test, truth, *best, writers, cache, report.timings);
    } catch (const Error& e) {
      report.failures.push_back("fold " + std::to_string(f) + " test " + describe(e));
      continue;
    }

    FoldOutcome fo;
    fo.fold = static_cast<int>(f);
    fo.grid_point = best_g;
    std::vector<Outcome> units, page_list;
    for (const auto& e : evals) {
      units.insert(units.end(), e.units.begin(), e.units.end());
      page_list.push_back(e.page);
    }
    fo.units = static_cast<int>(units.size());
    fo.pages = static_cast<int>(page_list.size());
    fo.unit_top1 = top_n_accuracy(units, 1);
    fo.page_top1 = top_n_accuracy(page_list, 1);
    report.folds.push_back(fo);
    report.unit_outcomes.insert(report.unit_outcomes.end(), units.begin(), units.end());
    report.page_outcomes.insert(report.page_outcomes.end(), page_list.begin(), page_list.end());

    const auto ids = best->registry.writer_ids();
    WeightFunction fn = best->registry.config.weight;
    for (std::size_t k = 0; k < std::size(kWeights); ++k) {
      fn.kind = kWeights[k];
      for (const auto& e : evals) {
        if (e.scores.empty()) {
          by_weight[k].push_back(e.page);
          continue;
        }
        const FusedResult fr = fuse_page(e.scores, fn, ids);
        by_weight[k].push_back(outcome_of(fr.ranking, best->reg_to_global, e.page.truth, static_cast<int>(writers.size())));
      }
    }
  }
  for (std::size_t k = 0; k < std::size(kWeights); ++k)
    report.weight_page_top1.emplace_back(std::string(to_string(kWeights[k])), top_n_accuracy(by_weight[k], 1));
  report.total_seconds = seconds_since(start);
  return report;
}

}  // namespace scoreid
