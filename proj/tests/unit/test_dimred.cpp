#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "scoreid/dimred.hpp"
#include "scoreid/error.hpp"
#include "tempdir.hpp"

using namespace scoreid;

namespace {

// x = mu + W y + noise with a known rank-`m` W in `n` dimensions.
struct Planted {
  FrameMatrix x;
  Eigen::MatrixXd w;
};

Planted planted(std::mt19937_64& rng, int N, int n, int m, double noise_sd) {
  std::normal_distribution<double> z(0.0, 1.0);
  Planted p;
  p.w.resize(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) p.w(i, j) = 2.0 * z(rng);
  Eigen::VectorXd mu(n);
  for (int i = 0; i < n; ++i) mu(i) = z(rng);
  p.x.resize(N, n);
  for (int r = 0; r < N; ++r) {
    Eigen::VectorXd y(m);
    for (int j = 0; j < m; ++j) y(j) = z(rng);
    Eigen::VectorXd v = mu + p.w * y;
    for (int i = 0; i < n; ++i) v(i) += noise_sd * z(rng);
    p.x.row(r) = v.transpose();
  }
  return p;
}

double angle_deg(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double c = std::abs(a.dot(b)) / (a.norm() * b.norm());
  return std::acos(std::min(c, 1.0)) * 180.0 / std::numbers::pi;
}

}  // namespace

TEST_CASE("factor analysis recovers a planted subspace") {
  std::mt19937_64 rng(31);
  const Planted p = planted(rng, 2000, 10, 2, 0.05);
  const auto fit = fa_fit(p.x, 2, 200, 1);
  CHECK(oracle::max_principal_angle_deg(fit.model.loadings, p.w) < 2.0);

  const auto closed = oracle::ppca_closed_form(p.x, 2);
  CHECK(std::abs(fit.model.noise_var - closed.noise_var) <= 0.05 * closed.noise_var);
  for (std::size_t i = 1; i < fit.trace.size(); ++i) CHECK(fit.trace[i] >= fit.trace[i - 1] - 1e-6);
  CHECK(std::abs(fa_loglik(p.x, fit.model) -
                 oracle::fa_loglik_naive(p.x, fit.model.loadings, fit.model.mean, fit.model.noise_var)) < 1e-6);
}

TEST_CASE("factor analysis on isotropic noise") {
  std::mt19937_64 rng(32);
  // Large N keeps the sampling spread of the eigenvalues below the bound.
  const FrameMatrix x = oracle::random_frames(rng, 1000000, 4, 1.0);
  const auto fit = fa_fit(x, 1, 200, 1);
  CHECK(fit.model.loadings.col(0).norm() < 0.1 * std::sqrt(fit.model.noise_var));
}

TEST_CASE("factor analysis errors") {
  std::mt19937_64 rng(33);
  CHECK_THROWS_AS(fa_fit(oracle::random_frames(rng, 50, 4), 4, 10, 1), Error);
  CHECK_THROWS_AS(fa_fit(oracle::random_frames(rng, 3, 4), 1, 10, 1), Error);
  // Rank-one data cannot support two factors.
  FrameMatrix flat(40, 4);
  for (int r = 0; r < 40; ++r)
    for (int c = 0; c < 4; ++c) flat(r, c) = r * (c + 1.0);
  try {
    fa_fit(flat, 2, 10, 1);
    FAIL("expected a fit error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Fit);
  }
}

TEST_CASE("varimax") {
  std::mt19937_64 rng(34);
  const Eigen::MatrixXd one = Eigen::MatrixXd::Random(5, 1);
  CHECK(varimax(one).isApprox(one, 1e-14));

  Eigen::MatrixXd simple = Eigen::MatrixXd::Zero(6, 2);
  simple << 0.9, 0, 0.8, 0, 0.7, 0, 0, 0.6, 0, 0.5, 0, 0.4;
  const Eigen::MatrixXd rotated = varimax(simple);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 2; ++j) CHECK(std::abs(std::abs(rotated(i, j)) - simple(i, j)) < 1e-9);

  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd w(6, 2);
    std::normal_distribution<double> z(0.0, 1.0);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 2; ++j) w(i, j) = z(rng);
    std::vector<double> trace;
    const Eigen::MatrixXd r = varimax(w, &trace);
    CHECK(varimax_criterion(r) >= varimax_criterion(w) - 1e-12);
    CHECK(std::abs(varimax_criterion(w) - oracle::varimax_value(w)) < 1e-12);
    CHECK(std::abs(varimax_criterion(r) - oracle::varimax_grid_best(w, 200000)) < 1e-4);
    // Rotation only: the row norms are unchanged.
    for (int i = 0; i < 6; ++i) CHECK(std::abs(r.row(i).norm() - w.row(i).norm()) < 1e-10);
  }
}

TEST_CASE("factor analysis transform") {
  std::mt19937_64 rng(35);
  FaModel m;
  m.loadings = Eigen::MatrixXd::Random(7, 3);
  m.mean = Eigen::VectorXd::Random(7);
  m.noise_var = 0.4;
  CHECK(fa_transform(m.mean, m).norm() < 1e-15);

  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::VectorXd x = Eigen::VectorXd::Random(7);
    const Eigen::MatrixXd c = m.loadings * m.loadings.transpose() + m.noise_var * Eigen::MatrixXd::Identity(7, 7);
    const Eigen::VectorXd naive = m.loadings.transpose() * c.inverse() * (x - m.mean);
    CHECK((fa_transform(x, m) - naive).norm() < 1e-9);
    const FeatureTransform t = FeatureTransform::from(m);
    FrameMatrix row = x.transpose();
    CHECK((t.apply(row).row(0).transpose() - naive).norm() < 1e-9);
  }

  // Orthonormal loadings and vanishing noise invert exactly.
  FaModel q;
  q.loadings = Eigen::HouseholderQR<Eigen::MatrixXd>(Eigen::MatrixXd::Random(6, 2)).householderQ() *
               Eigen::MatrixXd::Identity(6, 2);
  q.mean = Eigen::VectorXd::Zero(6);
  q.noise_var = 1e-12;
  const Eigen::Vector2d y0(0.7, -1.2);
  CHECK((fa_transform(q.loadings * y0, q) - y0).norm() < 1e-9);
  CHECK_THROWS_AS(fa_transform(Eigen::VectorXd::Zero(3), q), Error);
}

TEST_CASE("principal components") {
  std::mt19937_64 rng(36);
  SUBCASE("points on the x axis") {
    FrameMatrix x(5, 2);
    x << -2, 0, -1, 0, 0, 0, 1, 0, 2, 0;
    const auto p = pca_fit(x, 2);
    CHECK(std::abs(std::abs(p.components(0, 0)) - 1.0) < 1e-12);
    CHECK(std::abs(p.eigenvalues(1)) < 1e-12);
  }
  SUBCASE("full rank transform is an isometry") {
    const FrameMatrix x = oracle::random_frames(rng, 30, 4);
    const auto p = pca_fit(x, 4);
    const Eigen::VectorXd a = x.row(0).transpose(), b = x.row(1).transpose();
    CHECK(std::abs((pca_transform(a, p) - pca_transform(b, p)).norm() - (a - b).norm()) < 1e-9);
  }
  SUBCASE("matches an explicit covariance eigensolver") {
    FrameMatrix x = oracle::random_frames(rng, 50, 5);
    for (int c = 0; c < 5; ++c) x.col(c) *= (c + 1.0);
    const auto p = pca_fit(x, 5);
    const auto e = oracle::jacobi_eigen(oracle::covariance(x, 1));
    for (int j = 0; j < 5; ++j) {
      CHECK(std::abs(p.eigenvalues(j) - e.values(j)) < 1e-8);
      const Eigen::VectorXd v = p.components.row(j).transpose();
      CHECK(std::min((v - e.vectors.col(j)).norm(), (v + e.vectors.col(j)).norm()) < 1e-8);
    }
  }
  CHECK_THROWS_AS(pca_fit(oracle::random_frames(rng, 10, 3), 4), Error);
}

TEST_CASE("linear discriminant analysis") {
  std::mt19937_64 rng(37);
  std::normal_distribution<double> z(0.0, 1.0);
  SUBCASE("two classes match the Fisher direction") {
    FrameMatrix x(400, 2);
    std::vector<int> labels;
    for (int i = 0; i < 400; ++i) {
      const int c = i % 2;
      const double a = z(rng), b = z(rng);
      x(i, 0) = (c ? 2.0 : 0.0) + a + 0.5 * b;
      x(i, 1) = 0.5 * a + b;
      labels.push_back(c);
    }
    const auto lda = lda_fit(x, labels, 1);
    CHECK(angle_deg(lda.projection.col(0), oracle::fisher_direction(x, labels)) < 1.0);
    CHECK(lda.eigenvalues(0) >= 0.0);
  }
  SUBCASE("rank bound and objective maximality") {
    const int c = 3, n = 5;
    FrameMatrix x(300, n);
    std::vector<int> labels;
    for (int i = 0; i < 300; ++i) {
      labels.push_back(i % c);
      for (int d = 0; d < n; ++d) x(i, d) = z(rng) + (d == i % c ? 3.0 : 0.0);
    }
    const auto lda = lda_fit(x, labels, 2);
    CHECK(lda.eigenvalues(1) >= 0.0);
    CHECK(lda.eigenvalues(0) >= lda.eigenvalues(1));
    // Fisher ratio of the leading direction beats random directions.
    const auto ratio = [&](const Eigen::VectorXd& v) {
      double sb = 0, sw = 0;
      for (int k = 0; k < c; ++k) sb += lda.counts[k] * std::pow((lda.class_means.row(k).transpose() - lda.mean).dot(v), 2);
      for (int i = 0; i < 300; ++i) sw += std::pow((x.row(i) - lda.class_means.row(labels[i])).dot(v.transpose()), 2);
      return sb / sw;
    };
    const double best = ratio(lda.projection.col(0));
    for (int t = 0; t < 50; ++t) {
      Eigen::VectorXd v(n);
      for (int d = 0; d < n; ++d) v(d) = z(rng);
      CHECK(ratio(v) <= best + 1e-9);
    }
    CHECK_THROWS_AS(lda_fit(x, labels, 3), Error);
  }
  SUBCASE("errors") {
    FrameMatrix x = oracle::random_frames(rng, 6, 2);
    const std::vector<int> lonely{0, 0, 0, 0, 0, 1};
    try {
      lda_fit(x, lonely, 1);
      FAIL("expected a data error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Data);
    }
    const std::vector<int> split{0, 1, 0, 1, 0, 1, 0, 1};
    // Both classes have mean zero.
    FrameMatrix eq(8, 2);
    for (int i = 0; i < 8; ++i) eq.row(i) << (i / 2 % 2 ? 1.0 : -1.0), (i / 4 ? 1.0 : -1.0);
    try {
      lda_fit(eq, split, 1);
      FAIL("expected a fit error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Fit);
    }
  }
}

TEST_CASE("transform files round trip") {
  testing::TempDir dir("xf");
  std::mt19937_64 rng(38);
  const auto p = pca_fit(oracle::random_frames(rng, 40, 6), 3);
  const FeatureTransform t = FeatureTransform::from(p);
  save_transform(t, dir / "t.bin");
  const FeatureTransform back = load_transform(dir / "t.bin");
  CHECK(back.kind == TransformKind::Pca);
  CHECK(back.mean == t.mean);
  CHECK(back.projection == t.projection);
  const FrameMatrix x = oracle::random_frames(rng, 3, 6);
  CHECK(t.apply(x).isApprox(back.apply(x)));
  CHECK(parse_transform_kind("lda") == TransformKind::Lda);
  CHECK_THROWS_AS(parse_transform_kind("ica"), Error);
}
