#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "fixtures.hpp"
#include "scoreid/error.hpp"
#include "scoreid/parallel.hpp"
#include "scoreid/pipeline.hpp"
#include "tempdir.hpp"

using namespace scoreid;

namespace {

const std::vector<std::string> kIds3{"a", "b", "c"};

LineScore line_with(std::vector<double> p) {
  LineScore s;
  s.frames = 10;
  s.probability = std::move(p);
  s.log_likelihood.assign(s.probability.size(), 0.0);
  return s;
}

constexpr WeightKind kAllWeights[] = {WeightKind::Uniform, WeightKind::InvertedDistance,
                                      WeightKind::InvertedDistanceSquared, WeightKind::ExponentialDecay};

// Small, fast profile for end-to-end tests.
RunConfig quick_config() {
  RunConfig cfg;
  cfg.model_kind = ModelKind::Gmm;
  cfg.mixtures = 8;
  cfg.window.orientation_bins = 8;
  return cfg;
}

std::map<std::string, std::string> read_dir(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    files[e.path().filename().string()] = ss.str();
  }
  return files;
}

}  // namespace

TEST_CASE("rank weights") {
  WeightFunction fn;
  fn.kind = WeightKind::InvertedDistance;
  CHECK(weight(1, 50, fn) == 50.0);
  fn.kind = WeightKind::InvertedDistanceSquared;
  CHECK(weight(2, 50, fn) == 12.5);
  fn.kind = WeightKind::Uniform;
  for (int n = 1; n <= 7; ++n) CHECK(weight(n, 7, fn) == 1.0);
  fn.kind = WeightKind::ExponentialDecay;
  fn.decay = 0.5;
  CHECK(weight(3, 7, fn) == std::exp(-1.5));
  CHECK_THROWS_AS(weight(0, 7, fn), Error);
  CHECK_THROWS_AS(weight(8, 7, fn), Error);

  for (auto kind : kAllWeights) {
    fn.kind = kind;
    for (int n = 1; n <= 20; ++n) {
      CHECK(weight(n, 20, fn) > 0.0);
      if (n > 1 && kind != WeightKind::Uniform) CHECK(weight(n, 20, fn) <= weight(n - 1, 20, fn));
    }
    CHECK(parse_weight_kind(to_string(kind)) == kind);
  }
  CHECK_THROWS_AS(parse_weight_kind("linear"), Error);
}

TEST_CASE("page fusion") {
  WeightFunction fn;
  SUBCASE("worked two-line example") {
    fn.kind = WeightKind::InvertedDistance;
    const LineScore lines[] = {line_with({1.0, 0.5, 0.2}), line_with({0.4, 1.0, 0.3})};
    const auto r = fuse_page(lines, fn, kIds3);
    // Brute-force recomputation of the weighted sum.
    std::vector<double> expected(3, 0.0);
    for (const auto& l : lines)
      for (int i = 0; i < 3; ++i) {
        int rank = 1;
        for (int j = 0; j < 3; ++j) rank += l.probability[j] > l.probability[i];
        expected[i] += 3.0 / rank * l.probability[i];
      }
    for (int i = 0; i < 3; ++i) CHECK(std::abs(r.fused[i] - expected[i]) < 1e-15);
    CHECK(std::abs(r.fused[0] - 3.6) < 1e-12);
    CHECK(std::abs(r.fused[1] - 3.75) < 1e-12);
    CHECK(std::abs(r.fused[2] - 0.5) < 1e-12);
    CHECK(r.ranking.order.front() == 1);
  }
  SUBCASE("single line keeps the line ranking") {
    const LineScore one[] = {line_with({0.3, 1.0, 0.7})};
    for (auto kind : kAllWeights) {
      fn.kind = kind;
      CHECK(fuse_page(one, fn, kIds3).ranking.order == std::vector<int>{1, 2, 0});
    }
  }
  SUBCASE("unanimous lines keep their ranking") {
    const LineScore lines[] = {line_with({0.2, 1.0, 0.6}), line_with({0.1, 1.0, 0.9}), line_with({0.05, 1.0, 0.3})};
    for (auto kind : kAllWeights) {
      fn.kind = kind;
      CHECK(fuse_page(lines, fn, kIds3).ranking.order == std::vector<int>{1, 2, 0});
    }
  }
  CHECK_THROWS_AS(fuse_page({}, fn, kIds3), Error);
}

TEST_CASE("ranking ties follow writer ids") {
  const std::vector<std::string> ids{"w-03", "w-01", "w-02"};
  const double scores[] = {1.0, 1.0, 0.5};
  const auto r = rank_scores(scores, ids);
  CHECK(r.order == std::vector<int>{1, 0, 2});
  CHECK(r.rank == std::vector<int>{2, 1, 3});
}

TEST_CASE("line probabilities") {
  const double ll[] = {-1000.0, -980.0, -1100.0};
  const auto p = line_probabilities(ll, 20);
  CHECK(p[1] == 1.0);
  CHECK(std::abs(p[0] - std::exp(-1.0)) < 1e-15);
  CHECK(std::abs(p[2] - std::exp(-6.0)) < 1e-15);
  for (double v : p) CHECK((v >= 0.0 && v <= 1.0));
  const double single[] = {-5e6};
  CHECK(line_probabilities(single, 1000) == std::vector<double>{1.0});
}

namespace {

// Five writers with eight six-line pages each, trained once for all subcases.
struct Trained {
  SynthPageSpec spec;
  RunConfig cfg;
  std::vector<LoadedPage> pages;
  Registry reg;
};

const Trained& five_writers() {
  static const Trained t = [] {
    Trained r;
    r.spec.lines_per_page = 6;
    r.cfg = quick_config();
    r.cfg.mixtures = 32;
    r.pages = fixture::synthetic_pages(5, 8, r.spec, 2024);
    r.reg = train_writer_models(r.pages, r.cfg);
    return r;
  }();
  return t;
}

}  // namespace

TEST_CASE("training, registry files and identification") {
  const Trained& t = five_writers();
  const SynthPageSpec& spec = t.spec;
  const RunConfig& cfg = t.cfg;
  const auto& pages = t.pages;
  const Registry& reg = t.reg;
  REQUIRE(reg.size() == 5);
  CHECK(reg.writer_ids() == std::vector<std::string>{"w-01", "w-02", "w-03", "w-04", "w-05"});

  SUBCASE("writers score their own training lines highest") {
    int lines = 0, own = 0;
    for (const auto& p : pages) {
      const PageUnits units = extract_units(p.image, cfg, nullptr);
      for (const auto& f : units.frames) {
        if (f.rows() == 0) continue;
        const auto s = score_frames(f, reg);
        const auto best = std::max_element(s.probability.begin(), s.probability.end()) - s.probability.begin();
        own += reg.writers[static_cast<std::size_t>(best)].writer_id == p.entry.writer_id;
        ++lines;
      }
    }
    CHECK(lines == 5 * 8 * 6);
    CHECK(100.0 * own / lines >= 90.0);
  }

  SUBCASE("registry files are reproducible and job-count independent") {
    testing::TempDir dir("reg");
    save_registry(reg, dir / "a");
    set_max_jobs(1);
    save_registry(train_writer_models(pages, cfg), dir / "b");
    set_max_jobs(4);
    save_registry(train_writer_models(pages, cfg), dir / "c");
    set_max_jobs(0);
    CHECK(read_dir(dir / "a") == read_dir(dir / "b"));
    CHECK(read_dir(dir / "a") == read_dir(dir / "c"));

    const Registry back = load_registry(dir / "a");
    CHECK(back.digest() == reg.digest());
    CHECK(back.writers[2].hmm.emissions[0].means == reg.writers[2].hmm.emissions[0].means);

    std::ofstream(dir / "a" / "registry.txt", std::ios::app) << "config jobs 3\n";
    CHECK_NOTHROW(load_registry(dir / "a"));  // jobs is not part of the digest
    std::ofstream(dir / "a" / "registry.txt", std::ios::app) << "config orientation-bins 16\n";
    CHECK_THROWS_AS(load_registry(dir / "a"), Error);
  }

  SUBCASE("identification report") {
    SynthPageSpec s = spec;
    s.style_seed = fixture::style_seed(2024, 3);
    const auto [img, gt] = generate_page(s, 999);
    const PageResult r = identify_page(img, reg, cfg.weight);
    CHECK(r.units.size() == 6);
    CHECK(reg.writers[static_cast<std::size_t>(r.page.ranking.order.front())].writer_id == "w-04");
    std::ostringstream out;
    write_identification(out, r, reg);
    const std::string text = out.str();
    CHECK(text.rfind("writers w-01 w-02 w-03 w-04 w-05\nunit 0 page ", 0) == 0);
    CHECK(text.find("page best w-04 ranking w-04") != std::string::npos);
  }

  SUBCASE("a one-line page ranks like its line") {
    SynthPageSpec s = spec;
    s.lines_per_page = 1;
    s.style_seed = fixture::style_seed(2024, 1);
    const auto img = generate_page(s, 5).first;
    const PageResult r = identify_page(img, reg, cfg.weight);
    REQUIRE(r.units.size() == 1);
    CHECK(r.page.ranking.order == r.units[0].ranking.order);
  }

  SUBCASE("blank pages cannot be identified") {
    try {
      identify_page(GrayImage(1200, 400, 255), reg, cfg.weight);
      FAIL("expected an identification error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Identification);
    }
  }
}

TEST_CASE("degenerate registries and units") {
  SynthPageSpec spec;
  spec.lines_per_page = 2;
  RunConfig cfg = quick_config();
  const auto pages = fixture::synthetic_pages(1, 2, spec, 7);
  const Registry one = train_writer_models(pages, cfg);
  CHECK(one.size() == 1);
  const PageUnits units = extract_units(pages[0].image, cfg, nullptr);
  CHECK(score_frames(units.frames[0], one).probability == std::vector<double>{1.0});

  try {
    score_frames(FrameMatrix(0, units.frames[0].cols()), one);
    FAIL("expected a score error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Score);
  }

  const std::string who[] = {"solo"};
  const PageUnits empty[] = {PageUnits{{LineBox{0, 9, -1}}, {FrameMatrix(0, 128)}, {}}};
  try {
    train_from_units(who, empty, cfg, std::nullopt);
    FAIL("expected a training error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Training);
  }
}

TEST_CASE("two well separated writers") {
  SynthPageSpec spec;
  spec.lines_per_page = 4;
  RunConfig cfg = quick_config();
  auto pages = fixture::synthetic_pages(2, 3, spec, 88);
  const Registry reg = train_writer_models(pages, cfg);
  for (int w = 0; w < 2; ++w) {
    SynthPageSpec s = spec;
    s.style_seed = fixture::style_seed(88, w);
    s.lines_per_page = 1;
    const auto page = generate_page(s, 4242).first;
    const PageUnits units = extract_units(page, cfg, nullptr);
    REQUIRE(units.frames.size() == 1);
    const auto score = score_frames(units.frames[0], reg);
    CHECK(score.probability[static_cast<std::size_t>(w)] == 1.0);
  }
}

TEST_CASE("transforms and the block-line mode train end to end") {
  SynthPageSpec spec;
  spec.lines_per_page = 3;
  const auto pages = fixture::synthetic_pages(2, 3, spec, 55);
  for (auto kind : {TransformKind::Pca, TransformKind::Fa, TransformKind::Lda}) {
    RunConfig cfg = quick_config();
    cfg.transform = kind;
    cfg.transform_dim = kind == TransformKind::Lda ? 1 : 16;
    const Registry reg = train_writer_models(pages, cfg);
    CHECK(reg.transform.kind == kind);
    CHECK(reg.writers[0].hmm.dim() == cfg.transform_dim);
    CHECK_NOTHROW(identify_page(pages[0].image, reg, cfg.weight));
  }
  RunConfig block = quick_config();
  block.mode = Mode::BlockLine;
  const Registry reg = train_writer_models(pages, block);
  REQUIRE(reg.grammar.has_value());
  const PageResult r = identify_page(pages[4].image, reg, block.weight);
  CHECK(!r.units.empty());
  for (const auto& u : r.units) CHECK(u.box.strip >= 0);

  RunConfig gabor = quick_config();
  gabor.feature_kind = FeatureKind::Gabor;
  const Registry greg = train_writer_models(pages, gabor);
  CHECK(greg.writers[0].hmm.dim() == 48);
}

TEST_CASE("silence frames are still dropped on moderately noisy pages") {
  SynthPageSpec spec;
  spec.lines_per_page = 4;
  RunConfig cfg = quick_config();
  long clean = 0, noisy = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    spec.style_seed = seed * 31;
    const auto page = generate_page(spec, seed).first;
    for (const auto& f : extract_units(page, cfg, nullptr).frames) clean += f.rows();
    for (const auto& f : extract_units(add_gaussian_noise(page, 0.2, seed), cfg, nullptr).frames) noisy += f.rows();
  }
  REQUIRE(clean > 0);
  CHECK(double(noisy) / double(clean) <= 1.1);
}
