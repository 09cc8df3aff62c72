#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "scoreid/alignment.hpp"
#include "scoreid/error.hpp"
#include "scoreid/gmm.hpp"
#include "scoreid/hmm.hpp"
#include "scoreid/simd.hpp"
#include "tempdir.hpp"

using namespace scoreid;

namespace {

GmmParams single_gaussian(std::initializer_list<double> mean, std::initializer_list<double> var) {
  GmmParams g;
  g.weights = {1.0};
  g.means.resize(1, static_cast<Eigen::Index>(mean.size()));
  g.variances.resize(1, static_cast<Eigen::Index>(var.size()));
  int d = 0;
  for (double m : mean) g.means(0, d++) = m;
  d = 0;
  for (double v : var) g.variances(0, d++) = v;
  return g;
}

// One state per zone label, unit-variance 1-D emissions at -3 and +3.
FillerGrammar toy_grammar() {
  FillerGrammar g;
  g.without_score = wrap_as_hmm(single_gaussian({-3.0}, {1.0}));
  g.score = wrap_as_hmm(single_gaussian({3.0}, {1.0}));
  return g;
}

FrameMatrix column(const std::vector<double>& v) {
  FrameMatrix x(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = v[i];
  return x;
}

}  // namespace

TEST_CASE("gmm log-density") {
  const GmmParams std_normal = single_gaussian({0.0}, {1.0});
  FrameMatrix at_mode = FrameMatrix::Zero(1, 1);
  CHECK(std::abs(gmm_loglik(at_mode, std_normal) - std::log(1.0 / std::sqrt(2 * std::numbers::pi))) < 1e-15);
  CHECK(gmm_loglik(FrameMatrix(0, 1), std_normal) == 0.0);
  CHECK_THROWS_AS(gmm_loglik(FrameMatrix::Zero(2, 3), std_normal), Error);

  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const GmmParams g = oracle::random_gmm(rng, 2, 3);
    const FrameMatrix x = oracle::random_frames(rng, 3, 3, 2.0);
    long double expected = 0;
    for (int t = 0; t < 3; ++t) expected += oracle::gmm_log_density(x.row(t).data(), g);
    CHECK(std::abs(gmm_loglik(x, g) - static_cast<double>(expected)) < 1e-11);
  }
}

TEST_CASE("variance floor") {
  std::mt19937_64 rng(1);
  const FrameMatrix x = oracle::random_frames(rng, 400, 3, 2.0);
  const auto floor = variance_floor(x);
  const auto cov = oracle::covariance(x, 0);
  for (int d = 0; d < 3; ++d) CHECK(std::abs(floor(d) - 1e-3 * cov(d, d)) < 1e-12);
  CHECK(variance_floor(FrameMatrix::Zero(5, 2))(0) == 1e-6);
}

TEST_CASE("gmm fit") {
  std::mt19937_64 rng(7);
  SUBCASE("one mixture is the sample mean and variance") {
    const FrameMatrix x = oracle::random_frames(rng, 200, 2, 1.5);
    const auto fit = gmm_fit(x, 1, 3, 9);
    const auto cov = oracle::covariance(x, 0);
    CHECK(fit.model.weights[0] == doctest::Approx(1.0));
    for (int d = 0; d < 2; ++d) {
      CHECK(std::abs(fit.model.means(0, d) - x.col(d).mean()) < 1e-12);
      CHECK(std::abs(fit.model.variances(0, d) - cov(d, d)) < 1e-10);
    }
  }
  SUBCASE("two separated clusters") {
    std::normal_distribution<double> z(0.0, 1.0);
    FrameMatrix x(600, 1);
    for (int i = 0; i < 600; ++i) x(i, 0) = (i % 2 ? 10.0 : -10.0) + z(rng);
    const auto fit = gmm_fit(x, 2, 20, 3);
    double lo = std::min(fit.model.means(0, 0), fit.model.means(1, 0));
    double hi = std::max(fit.model.means(0, 0), fit.model.means(1, 0));
    double lo_truth = 0, hi_truth = 0;
    for (int i = 0; i < 600; ++i) (i % 2 ? hi_truth : lo_truth) += x(i, 0) / 300.0;
    CHECK(std::abs(lo - lo_truth) < 0.05);
    CHECK(std::abs(hi - hi_truth) < 0.05);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(gmm_fit(FrameMatrix::Zero(2, 1), 3, 1, 1), Error);
    FrameMatrix bad = FrameMatrix::Zero(4, 1);
    bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
    try {
      gmm_fit(bad, 1, 1, 1);
      FAIL("expected a data error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Data);
    }
  }
  SUBCASE("trace is non-decreasing and deterministic") {
    const FrameMatrix x = oracle::random_frames(rng, 300, 3);
    const auto a = gmm_fit(x, 4, 10, 5);
    const auto b = gmm_fit(x, 4, 10, 5);
    CHECK(a.trace == b.trace);
    for (std::size_t i = 1; i < a.trace.size(); ++i) CHECK(a.trace[i] >= a.trace[i - 1] - 1e-6);
  }
}

TEST_CASE("flat start") {
  std::mt19937_64 rng(3);
  const FrameMatrix x = oracle::random_frames(rng, 40, 2);
  const FrameMatrix seqs1[] = {x};
  const HmmParams one = hmm_init_flat(seqs1, 1);
  const auto cov = oracle::covariance(x, 0);
  CHECK(std::abs(one.emissions[0].means(0, 1) - x.col(1).mean()) < 1e-12);
  CHECK(std::abs(one.emissions[0].variances(0, 1) - cov(1, 1)) < 1e-12);

  const FrameMatrix seqs2[] = {x, x};
  const HmmParams a = hmm_init_flat(seqs2, 3), b = hmm_init_flat(seqs1, 3);
  for (int s = 0; s < 3; ++s) {
    CHECK(a.emissions[s].means.isApprox(b.emissions[s].means, 1e-12));
    CHECK(a.emissions[s].variances.isApprox(b.emissions[s].variances, 1e-12));
  }

  std::vector<double> plateau;
  for (double level : {1.0, 5.0, -2.0})
    for (int k = 0; k < 10; ++k) plateau.push_back(level);
  const FrameMatrix p[] = {column(plateau)};
  const HmmParams h = hmm_init_flat(p, 3);
  CHECK(h.emissions[0].means(0, 0) == doctest::Approx(1.0));
  CHECK(h.emissions[1].means(0, 0) == doctest::Approx(5.0));
  CHECK(h.emissions[2].means(0, 0) == doctest::Approx(-2.0));
  CHECK(h.transitions(0, 0) == 0.6);
  CHECK(h.transitions(2, 2) == 1.0);

  const FrameMatrix short_seq[] = {oracle::random_frames(rng, 2, 2)};
  try {
    hmm_init_flat(short_seq, 3);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
}

TEST_CASE("viterbi and forward against path enumeration") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const HmmParams h = oracle::random_hmm(rng, 2, 2, 1);
    const FrameMatrix x = oracle::random_frames(rng, 3, 1, 1.5);
    const auto truth = oracle::enumerate_paths(x, h);
    const auto v = viterbi_loglik(x, h);
    CHECK(std::abs(v.log_likelihood - truth.viterbi) < 1e-9);
    CHECK(v.path == truth.best_path);
    CHECK(std::abs(forward_loglik(x, h) - truth.forward) < 1e-9);
  }
}

TEST_CASE("degenerate trellises") {
  std::mt19937_64 rng(5);
  const GmmParams g = oracle::random_gmm(rng, 3, 2);
  const FrameMatrix x = oracle::random_frames(rng, 7, 2);
  const HmmParams one = wrap_as_hmm(g);
  CHECK(std::abs(viterbi_loglik(x, one).log_likelihood - gmm_loglik(x, g)) < 1e-12);
  CHECK(std::abs(forward_loglik(x, one) - gmm_loglik(x, g)) < 1e-9);

  HmmParams chain = oracle::random_hmm(rng, 3, 1, 2);
  chain.transitions.setZero();
  chain.transitions(0, 1) = 1.0;
  chain.transitions(1, 2) = 1.0;
  chain.transitions(2, 2) = 1.0;
  const FrameMatrix three = oracle::random_frames(rng, 3, 2);
  const auto v = viterbi_loglik(three, chain);
  CHECK(v.path == std::vector<int>{0, 1, 2});
  CHECK(std::abs(v.log_likelihood - forward_loglik(three, chain)) < 1e-12);

  const auto none = viterbi_loglik(oracle::random_frames(rng, 2, 2), chain);
  CHECK(none.log_likelihood == -std::numeric_limits<double>::infinity());
  CHECK(none.path.empty());
  CHECK(forward_loglik(oracle::random_frames(rng, 2, 2), chain) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("viterbi ties go to the lower state") {
  HmmParams h;
  h.initial = {0.5, 0.5};
  h.transitions = Eigen::MatrixXd::Constant(2, 2, 0.5);
  h.emissions = {single_gaussian({0.0}, {1.0}), single_gaussian({0.0}, {1.0})};
  LogTopology topo = topology_of(h);
  topo.final_states = {true, true};
  const auto v = viterbi_decode(emission_log_densities(FrameMatrix::Zero(4, 1), h), topo);
  CHECK(v.path == std::vector<int>{0, 0, 0, 0});
}

TEST_CASE("baum-welch") {
  std::mt19937_64 rng(19);
  SUBCASE("one state one mixture matches the closed form gmm") {
    std::vector<FrameMatrix> seqs;
    for (int i = 0; i < 5; ++i) seqs.push_back(oracle::random_frames(rng, 12 + i, 2, 1.3));
    const auto bw = baum_welch(seqs, hmm_init_flat(seqs, 1), {});
    const auto gm = gmm_fit(stack_frames(seqs), 1, 5, 1);
    CHECK(std::abs(bw.model.emissions[0].means(0, 0) - gm.model.means(0, 0)) < 1e-9);
    CHECK(std::abs(bw.model.emissions[0].variances(0, 1) - gm.model.variances(0, 1)) < 1e-9);
  }
  SUBCASE("recovers a planted two-state model") {
    const double stay = 0.9;
    std::geometric_distribution<int> extra(1.0 - stay);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<FrameMatrix> seqs;
    for (int i = 0; i < 300; ++i) {
      std::vector<double> v;
      const int d0 = 1 + extra(rng);
      for (int t = 0; t < d0; ++t) v.push_back(-2.0 + z(rng));
      for (int t = 0; t < 8; ++t) v.push_back(2.0 + z(rng));
      seqs.push_back(column(v));
    }
    BaumWelchConfig cfg;
    cfg.iterations = 30;
    const auto bw = baum_welch(seqs, hmm_init_flat(seqs, 2), cfg);
    CHECK(std::abs(bw.model.emissions[0].means(0, 0) + 2.0) < 0.1);
    CHECK(std::abs(bw.model.emissions[1].means(0, 0) - 2.0) < 0.1);
    CHECK(std::abs(bw.model.transitions(0, 0) - stay) < 0.05);
    for (std::size_t i = 1; i < bw.trace.size(); ++i)
      CHECK(bw.trace[i].log_likelihood >= bw.trace[i - 1].log_likelihood - 1e-6);
  }
  SUBCASE("mixture splitting schedule") {
    std::vector<FrameMatrix> seqs;
    for (int i = 0; i < 6; ++i) seqs.push_back(oracle::random_frames(rng, 60, 2));
    BaumWelchConfig cfg;
    cfg.mixture_target = 4;
    cfg.iterations = 3;
    cfg.stage_iterations = 2;
    const auto bw = baum_welch(seqs, hmm_init_flat(seqs, 2), cfg);
    CHECK(bw.model.mixtures() == 4);
    std::vector<int> counts;
    for (const auto& e : bw.trace) counts.push_back(e.mixtures);
    CHECK(counts == std::vector<int>{1, 1, 2, 2, 4, 4, 4, 4});
    for (std::size_t i = 1; i < bw.trace.size(); ++i)
      if (bw.trace[i].mixtures == bw.trace[i - 1].mixtures)
        CHECK(bw.trace[i].log_likelihood >= bw.trace[i - 1].log_likelihood - 1e-6);
  }
  SUBCASE("no sequences") { CHECK_THROWS_AS(baum_welch({}, wrap_as_hmm(single_gaussian({0}, {1})), {}), Error); }
}

TEST_CASE("mixture split keeps weights normalized") {
  std::mt19937_64 rng(2);
  HmmParams h = oracle::random_hmm(rng, 2, 1, 3);
  split_mixtures(h, 3, 0.2);
  for (const auto& g : h.emissions) {
    CHECK(g.mixtures() == 3);
    double s = 0;
    for (double w : g.weights) s += w;
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("hmm files round trip") {
  testing::TempDir dir("hmm");
  std::mt19937_64 rng(8);
  const HmmParams h = oracle::random_hmm(rng, 3, 2, 4);
  save_hmm(h, dir / "m.hmm");
  const HmmParams back = load_hmm(dir / "m.hmm");
  CHECK(back.initial == h.initial);
  CHECK(back.transitions == h.transitions);
  for (int s = 0; s < 3; ++s) {
    CHECK(back.emissions[s].weights == h.emissions[s].weights);
    CHECK(back.emissions[s].means == h.emissions[s].means);
    CHECK(back.emissions[s].variances == h.emissions[s].variances);
  }
  { std::ofstream(dir / "bad.hmm") << "garbage"; }
  try {
    load_hmm(dir / "bad.hmm");
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Format);
  }
}

TEST_CASE("simd kernels agree with the scalar reference") {
  const auto* avx = simd::avx2_kernels();
  if (!avx) {
    MESSAGE("AVX2 variant unavailable on this machine; equivalence not exercised");
    return;
  }
  const auto& ref = simd::scalar_kernels();
  CHECK(ref.isa == simd::Isa::Scalar);
  CHECK(avx->isa == simd::Isa::Avx2);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (std::size_t dim : {1u, 3u, 4u, 7u, 8u, 13u, 128u, 256u}) {
    const std::size_t mix = 5;
    std::vector<double> x(dim), means(dim * mix), inv(dim * mix), bias(mix);
    for (auto& v : x) v = u(rng);
    for (auto& v : means) v = u(rng);
    for (auto& v : inv) v = 0.1 + std::abs(u(rng));
    for (auto& v : bias) v = u(rng);
    std::vector<double> a(mix), b(mix);
    ref.diag_gauss_terms(x.data(), means.data(), inv.data(), bias.data(), dim, mix, a.data());
    avx->diag_gauss_terms(x.data(), means.data(), inv.data(), bias.data(), dim, mix, b.data());
    for (std::size_t m = 0; m < mix; ++m) CHECK(std::abs(a[m] - b[m]) <= 1e-12 * (1 + std::abs(a[m])));

    std::vector<double> s1(dim, 0.5), q1(dim, 0.25), s2 = s1, q2 = q1;
    ref.accumulate_moments(0.7, x.data(), dim, s1.data(), q1.data());
    avx->accumulate_moments(0.7, x.data(), dim, s2.data(), q2.data());
    for (std::size_t d = 0; d < dim; ++d) {
      CHECK(std::abs(s1[d] - s2[d]) <= 1e-14 * (1 + std::abs(s1[d])));
      CHECK(std::abs(q1[d] - q2[d]) <= 1e-14 * (1 + std::abs(q1[d])));
    }

    const double d1 = ref.squared_distance(x.data(), means.data(), dim);
    const double d2 = avx->squared_distance(x.data(), means.data(), dim);
    CHECK(std::abs(d1 - d2) <= 1e-12 * (1 + d1));

    std::vector<double> v(dim);
    for (auto& e : v) e = 50 * u(rng);
    const double l1 = ref.log_sum_exp(v.data(), dim), l2 = avx->log_sum_exp(v.data(), dim);
    CHECK(std::abs(l1 - l2) <= 1e-12 * (1 + std::abs(l1)));
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> all_neg(6, -inf);
  CHECK(ref.log_sum_exp(all_neg.data(), 6) == -inf);
  CHECK(avx->log_sum_exp(all_neg.data(), 6) == -inf);
  all_neg[4] = 1.5;
  CHECK(avx->log_sum_exp(all_neg.data(), 6) == doctest::Approx(1.5));
}

TEST_CASE("forced alignment") {
  const FillerGrammar g = toy_grammar();
  SUBCASE("single zone") {
    const auto a = forced_align(column(std::vector<double>(12, -3.0)), g);
    REQUIRE(a.segments.size() == 1);
    CHECK(a.segments[0] == ZoneSegment{ZoneLabel::WithoutScore, 0, 11});
    CHECK(is_valid_alignment(a, 12));
  }
  SUBCASE("gap score gap") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z(0.0, 0.5);
    std::vector<double> v;
    for (int t = 0; t < 40; ++t) v.push_back((t >= 12 && t < 27 ? 3.0 : -3.0) + z(rng));
    const auto a = forced_align(column(v), g);
    REQUIRE(a.segments.size() == 3);
    CHECK(a.segments[1].label == ZoneLabel::Score);
    CHECK(std::abs(a.segments[1].start - 12) <= 2);
    CHECK(std::abs(a.segments[1].end - 26) <= 2);
  }
  SUBCASE("minimum segment length") {
    FillerGrammar two = g;
    HmmParams h;
    h.initial = {1.0, 0.0};
    h.transitions = Eigen::MatrixXd::Zero(2, 2);
    h.transitions(0, 0) = 0.5;
    h.transitions(0, 1) = 0.5;
    h.transitions(1, 1) = 1.0;
    h.emissions = {single_gaussian({3.0}, {1.0}), single_gaussian({3.0}, {1.0})};
    two.score = h;
    // A lone Score-like frame cannot form a two-state Score segment.
    const auto a = forced_align(column({-3, -3, 3, -3, -3}), two);
    CHECK(a.segments.size() == 1);
    // One frame fits only the one-state WithoutScore model.
    CHECK(forced_align(column({3}), two).segments == std::vector<ZoneSegment>{{ZoneLabel::WithoutScore, 0, 0}});
    two.without_score = h;
    CHECK_THROWS_AS(forced_align(column({3}), two), Error);
  }
  SUBCASE("labels and segments") {
    const std::vector<ZoneLabel> labels{ZoneLabel::Score, ZoneLabel::Score, ZoneLabel::WithoutScore,
                                        ZoneLabel::Score};
    const auto segs = segments_from_labels(labels);
    CHECK(segs.size() == 3);
    CHECK(labels_from_segments(segs, 4) == labels);
  }
}

TEST_CASE("grammar training and realignment") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<LabelledStrip> strips;
  std::vector<FrameMatrix> raw;
  std::vector<std::vector<ZoneLabel>> truth;
  for (int s = 0; s < 12; ++s) {
    std::vector<double> v;
    std::vector<ZoneLabel> labels, exact;
    const int a = 8 + s % 4, b = a + 10 + s % 3;
    for (int t = 0; t < 36; ++t) {
      const bool score = t >= a && t < b;
      v.push_back((score ? 2.0 : -2.0) + z(rng));
      // Initial labels are off by two frames at the leading boundary.
      const bool noisy = t >= a + 2 && t < b;
      labels.push_back(noisy ? ZoneLabel::Score : ZoneLabel::WithoutScore);
      exact.push_back(score ? ZoneLabel::Score : ZoneLabel::WithoutScore);
    }
    truth.push_back(exact);
    strips.push_back({column(v), labels});
    raw.push_back(column(v));
  }
  ZoneTrainingConfig cfg;
  cfg.states = 2;
  cfg.mixtures = 1;
  const FillerGrammar g = train_grammar(strips, cfg);
  CHECK(g.exit(ZoneLabel::Score) > 0.0);
  CHECK(g.exit(ZoneLabel::Score) < 1.0);

  const auto same = realign_retrain(raw, g, 0, cfg);
  CHECK(same.rounds_run == 0);
  CHECK(same.grammar.score.emissions[0].means == g.score.emissions[0].means);

  const auto r = realign_retrain(raw, g, 3, cfg);
  for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] >= r.trace[i - 1] - 1e-6);
  CHECK(total_alignment_loglik(raw, r.grammar) >= total_alignment_loglik(raw, g) - 1e-6);
  const auto accuracy = [&](const FillerGrammar& gr) {
    int hit = 0, total = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const auto got = labels_from_segments(forced_align(raw[i], gr).segments, static_cast<int>(raw[i].rows()));
      for (std::size_t t = 0; t < got.size(); ++t) hit += got[t] == truth[i][t], ++total;
    }
    return double(hit) / total;
  };
  CHECK(accuracy(r.grammar) >= accuracy(g));

  testing::TempDir dir("grammar");
  save_grammar(r.grammar, dir / "g.bin");
  const FillerGrammar back = load_grammar(dir / "g.bin");
  CHECK(back.exit_score == r.grammar.exit_score);
  CHECK(back.score.emissions[1].means == r.grammar.score.emissions[1].means);
}
