#include <doctest.h>

#include <array>
#include <fstream>
#include <map>
#include <set>

#include "scoreid/error.hpp"
#include "scoreid/eval.hpp"
#include "scoreid/image_io.hpp"
#include "tempdir.hpp"

using namespace scoreid;

namespace {

std::vector<ManifestEntry> fake_manifest(int writers, int pages) {
  std::vector<ManifestEntry> out;
  for (int w = 0; w < writers; ++w)
    for (int p = 0; p < pages; ++p)
      out.push_back({"w-" + std::to_string(100 + w), "p" + std::to_string(p), "x.png"});
  return out;
}

}  // namespace

TEST_CASE("stratified folds") {
  const auto entries = fake_manifest(50, 20);
  const auto plan = make_folds(entries, 10, 42);
  REQUIRE(plan.splits.size() == 10);

  std::vector<int> tested(entries.size(), 0);
  for (const auto& s : plan.splits) {
    std::map<std::string, std::array<int, 3>> per_writer;
    for (int i : s.train) ++per_writer[entries[i].writer_id][0];
    for (int i : s.validation) ++per_writer[entries[i].writer_id][1];
    for (int i : s.test) ++per_writer[entries[i].writer_id][2];
    REQUIRE(per_writer.size() == 50);
    for (const auto& [w, c] : per_writer) CHECK(c == std::array<int, 3>{16, 2, 2});

    std::set<int> all(s.train.begin(), s.train.end());
    all.insert(s.validation.begin(), s.validation.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == entries.size());  // disjoint and covering
    for (int i : s.test) ++tested[static_cast<std::size_t>(i)];
  }
  for (int t : tested) CHECK(t == 1);

  const auto again = make_folds(entries, 10, 42);
  CHECK(again.splits[3].test == plan.splits[3].test);
  CHECK(make_folds(entries, 10, 43).splits[3].test != plan.splits[3].test);

  const auto two = make_folds(entries, 2, 1);
  for (const auto& s : two.splits) {
    CHECK(s.validation.empty());
    CHECK(s.test.size() == 500);
  }

  const auto single = make_folds(entries, 1, 5);
  REQUIRE(single.splits.size() == 1);
  CHECK(single.splits[0].train.size() == 800);
  CHECK(single.splits[0].validation.size() == 100);
  CHECK(single.splits[0].test.size() == 100);

  try {
    make_folds(fake_manifest(2, 3), 4, 1);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
}

TEST_CASE("top-n accuracy, error rate and confusion") {
  const std::vector<Outcome> o{{0, 0, 1}, {1, 0, 2}, {2, 1, 3}, {1, 1, 1}};
  CHECK(top_n_accuracy(o, 1) == 50.0);
  CHECK(top_n_accuracy(o, 2) == 75.0);
  CHECK(top_n_accuracy(o, 3) == 100.0);
  CHECK(top_n_accuracy({}, 1) == 0.0);
  CHECK_THROWS_AS(top_n_accuracy(o, 0), Error);

  CHECK(error_rate(100, 88.65) == 11.35);
  CHECK(error_rate(72.5, 72.5) == 0.0);
  CHECK(error_rate(80, 60) == 25.0);
  CHECK_THROWS_AS(error_rate(0, 1), Error);
  CHECK_THROWS_AS(error_rate(-3, 1), Error);

  const auto cm = confusion_matrix(o, 3);
  CHECK(cm == std::vector<std::vector<int>>{{1, 0, 0}, {1, 1, 0}, {0, 1, 0}});
  CHECK_THROWS_AS(confusion_matrix(o, 2), Error);
}

TEST_CASE("manifests") {
  testing::TempDir dir("manifest");
  const std::vector<ManifestEntry> entries{{"w-01", "p001", dir / "w-01" / "p001.png"},
                                           {"w-02", "p7", "/elsewhere/page.pgm"}};
  write_manifest(dir / "m.tsv", entries, "two pages");
  CHECK(read_manifest(dir / "m.tsv") == entries);

  std::ofstream(dir / "bad.tsv") << "w-01\tp001\n";
  CHECK_THROWS_AS(read_manifest(dir / "bad.tsv"), Error);
  CHECK_THROWS_AS(read_manifest(dir / "none.tsv"), Error);

  SUBCASE("writer folders") {
    const GrayImage page(40, 40, 255);
    std::filesystem::create_directories(dir / "root" / "w-02" / "image");
    std::filesystem::create_directories(dir / "root" / "w-01");
    std::filesystem::create_directories(dir / "root" / "notes");
    save_png(page, dir / "root" / "w-02" / "image" / "p002.png");
    save_png(page, dir / "root" / "w-02" / "image" / "p001.png");
    save_png(page, dir / "root" / "w-01" / "p009.png");
    std::ofstream(dir / "root" / "w-01" / "readme.txt") << "x";
    save_png(page, dir / "root" / "notes" / "n.png");
    const auto found = import_muscima(dir / "root");
    REQUIRE(found.size() == 3);
    CHECK(found[0].writer_id == "w-01");
    CHECK(found[1].page_id == "p001");
    CHECK(found[2].page_id == "p002");
    CHECK_THROWS_AS(import_muscima(dir / "root" / "notes"), Error);
  }
}

TEST_CASE("small benchmark") {
  testing::TempDir dir("bench");
  SynthPageSpec spec;
  spec.lines_per_page = 3;
  const auto entries = write_synthetic_corpus(dir.path(), 3, 4, spec, 11);
  REQUIRE(entries.size() == 12);
  CHECK(read_manifest(dir / "manifest.tsv") == entries);

  RunConfig cfg;
  cfg.model_kind = ModelKind::Gmm;
  cfg.mixtures = 4;
  cfg.window.orientation_bins = 8;
  cfg.folds = 2;
  const RunConfig grid[] = {cfg};
  const EvalReport r = run_benchmark(entries, grid);

  CHECK(r.writers == std::vector<std::string>{"w-01", "w-02", "w-03"});
  CHECK(r.failures.empty());
  CHECK(r.folds.size() == 2);
  CHECK(r.page_outcomes.size() == 12);
  CHECK(r.unit_outcomes.size() == 36);
  const auto top = r.page_top_n();
  REQUIRE(top.size() == 3);
  CHECK(top.back() == 100.0);
  for (std::size_t n = 1; n < top.size(); ++n) CHECK(top[n] >= top[n - 1]);
  CHECK(r.weight_page_top1.size() == 4);
  for (const auto& [name, acc] : r.weight_page_top1) CHECK((acc >= 0.0 && acc <= 100.0));
  const auto cm = r.confusion();
  int pages = 0;
  for (const auto& row : cm)
    for (int c : row) pages += c;
  CHECK(pages == 12);
  const std::string text = r.text();
  CHECK(text.rfind("scoreid-evaluation 1\n", 0) == 0);
  CHECK(text.find("total") == std::string::npos);
  CHECK(r.timings_text().find("total ") != std::string::npos);
}
