#include "scoreid/dimred.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "scoreid/binary_io.hpp"
#include "scoreid/error.hpp"

namespace scoreid {
namespace {

constexpr std::string_view kTransformMagic{"SIDXFRM\0", 8};
constexpr std::uint32_t kTransformVersion = 1;
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Eigen::MatrixXd centred(const FrameMatrix& x, const Eigen::VectorXd& mean) {
  return x.rowwise() - mean.transpose();
}

// Maximum-likelihood covariance (1/N) about `mean`.
Eigen::MatrixXd scatter(const FrameMatrix& x, const Eigen::VectorXd& mean) {
  const Eigen::MatrixXd c = centred(x, mean);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(c.cols(), c.cols());
  s.selfadjointView<Eigen::Lower>().rankUpdate(c.transpose());
  s.triangularView<Eigen::Upper>() = s.transpose();
  return s / static_cast<double>(x.rows());
}

double gaussian_loglik(const Eigen::MatrixXd& s, double n_samples, const Eigen::MatrixXd& w,
                       double noise) {
  const auto n = static_cast<double>(s.rows());
  const auto m = static_cast<double>(w.cols());
  const Eigen::MatrixXd M = w.transpose() * w + noise * Eigen::MatrixXd::Identity(w.cols(), w.cols());
  const Eigen::LLT<Eigen::MatrixXd> llt(M);
  const double logdet_m = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet_c = (n - m) * std::log(noise) + logdet_m;
  const Eigen::MatrixXd sw = s * w;
  const double tr = (s.trace() - llt.solve(w.transpose() * sw).trace()) / noise;
  return -0.5 * n_samples * (n * kLog2Pi + logdet_c + tr);
}

// Sign convention: the entry of largest magnitude is positive.
void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index i = 0;
  v.cwiseAbs().maxCoeff(&i);
  if (v(i) < 0) v = -v;
}

}  // namespace

double fa_loglik(const FrameMatrix& frames, const FaModel& model) {
  require(frames.cols() == model.input_dim(), ErrorKind::Argument, "frame dimension differs from FA model");
  return gaussian_loglik(scatter(frames, model.mean), static_cast<double>(frames.rows()), model.loadings,
                         model.noise_var);
}

FaFitResult fa_fit(const FrameMatrix& frames, int factors, int iters, std::uint64_t seed) {
  const Eigen::Index N = frames.rows(), n = frames.cols();
  require(factors >= 1 && factors < n, ErrorKind::Argument,
          "factor count must lie in [1, " + std::to_string(n - 1) + "]");
  require(N > n, ErrorKind::Argument,
          "FA needs more frames (" + std::to_string(N) + ") than dimensions (" + std::to_string(n) + ")");
  if (!frames.allFinite()) fail(ErrorKind::Data, "non-finite value in FA input");

  const Eigen::VectorXd mean = frames.colwise().mean().transpose();
  const Eigen::MatrixXd s = scatter(frames, mean);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  const Eigen::VectorXd lambda = eig.eigenvalues().reverse();
  const Eigen::MatrixXd u = eig.eigenvectors().rowwise().reverse();
  const double top = std::max(lambda(0), 0.0);
  const auto rank = (lambda.array() > 1e-10 * top).count();
  if (top <= 0.0 || rank < factors)
    fail(ErrorKind::Fit, "sample covariance rank " + std::to_string(rank) + " is below the factor count " +
                             std::to_string(factors));

  const double floor = std::max(1e-12 * s.trace() / static_cast<double>(n), 1e-300);
  double noise = std::max(lambda.tail(n - factors).mean(), floor);
  Eigen::MatrixXd w(n, factors);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, 1.0);
  const double jscale = 1e-3 * std::sqrt(s.trace() / static_cast<double>(n));
  for (int j = 0; j < factors; ++j) w.col(j) = u.col(j) * std::sqrt(std::max(lambda(j), 0.0));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] += jscale * jitter(rng);

  FaFitResult result;
  const auto nn = static_cast<double>(N);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(factors, factors);
  for (int it = 0; it < iters; ++it) {
    const double ll = gaussian_loglik(s, nn, w, noise);
    if (!std::isfinite(ll)) fail(ErrorKind::Numerical, "FA log-likelihood is not finite");
    result.trace.push_back(ll);
    const Eigen::MatrixXd minv = (w.transpose() * w + noise * I).inverse();
    const Eigen::MatrixXd sw = s * w;
    const Eigen::MatrixXd inner = noise * I + minv * w.transpose() * sw;
    const Eigen::MatrixXd w_new = inner.transpose().partialPivLu().solve(sw.transpose()).transpose();
    noise = std::max((s.trace() - (sw * minv * w_new.transpose()).trace()) / static_cast<double>(n), floor);
    w = w_new;
  }
  result.trace.push_back(gaussian_loglik(s, nn, w, noise));

  result.model.loadings = varimax(w);
  result.model.mean = mean;
  result.model.noise_var = noise;
  return result;
}

double varimax_criterion(const Eigen::MatrixXd& w) {
  const auto n = static_cast<double>(w.rows());
  const Eigen::ArrayXXd sq = w.array().square();
  double v = 0.0;
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    const double m1 = sq.col(j).sum() / n;
    const double m2 = sq.col(j).square().sum() / n;
    v += m2 - m1 * m1;
  }
  return v;
}

Eigen::MatrixXd varimax(const Eigen::MatrixXd& w, std::vector<double>* trace, double tol, int max_sweeps) {
  require(w.cols() >= 1, ErrorKind::Argument, "varimax needs at least one column");
  Eigen::MatrixXd r = w;
  const auto n = static_cast<double>(w.rows());
  double crit = varimax_criterion(r);
  if (w.cols() == 1) return r;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (Eigen::Index j = 0; j + 1 < r.cols(); ++j)
      for (Eigen::Index k = j + 1; k < r.cols(); ++k) {
        double a = 0, b = 0, c = 0, d = 0;
        for (Eigen::Index i = 0; i < r.rows(); ++i) {
          const double x = r(i, j), y = r(i, k);
          const double u = x * x - y * y, v = 2 * x * y;
          a += u;
          b += v;
          c += u * u - v * v;
          d += 2 * u * v;
        }
        const double phi = 0.25 * std::atan2(d - 2 * a * b / n, c - (a * a - b * b) / n);
        const double cs = std::cos(phi), sn = std::sin(phi);
        const Eigen::VectorXd x = r.col(j), y = r.col(k);
        const Eigen::VectorXd xr = cs * x + sn * y, yr = -sn * x + cs * y;
        // Keep a plane rotation only when it helps; rounding can make phi ~ 0 slightly worse.
        Eigen::MatrixXd trial = r;
        trial.col(j) = xr;
        trial.col(k) = yr;
        if (varimax_criterion(trial) >= varimax_criterion(r)) r.swap(trial);
      }
    const double next = varimax_criterion(r);
    if (trace) trace->push_back(next);
    const bool done = next - crit < tol;
    crit = next;
    if (done) break;
  }
  return r;
}

Eigen::VectorXd fa_transform(const Eigen::VectorXd& x, const FaModel& model) {
  require(x.size() == model.input_dim(), ErrorKind::Argument, "input dimension differs from FA model");
  const Eigen::MatrixXd& w = model.loadings;
  const Eigen::MatrixXd m =
      w.transpose() * w + model.noise_var * Eigen::MatrixXd::Identity(w.cols(), w.cols());
  return m.llt().solve(w.transpose() * (x - model.mean));
}

PcaModel pca_fit(const FrameMatrix& frames, int k) {
  const Eigen::Index N = frames.rows(), n = frames.cols();
  require(N >= 2, ErrorKind::Argument, "PCA needs at least two frames");
  require(k >= 1 && k <= n, ErrorKind::Argument,
          "component count " + std::to_string(k) + " exceeds the dimension " + std::to_string(n));
  require(k <= N, ErrorKind::Argument, "component count exceeds the number of frames");
  if (!frames.allFinite()) fail(ErrorKind::Data, "non-finite value in PCA input");

  PcaModel p;
  p.mean = frames.colwise().mean().transpose();
  const Eigen::MatrixXd c = centred(frames, p.mean);
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  p.components.resize(k, n);
  p.eigenvalues.resize(k);
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd v = svd.matrixV().col(j);
    fix_sign(v);
    p.components.row(j) = v.transpose();
    p.eigenvalues(j) = j < sv.size() ? sv(j) * sv(j) / static_cast<double>(N - 1) : 0.0;
  }
  return p;
}

Eigen::VectorXd pca_transform(const Eigen::VectorXd& x, const PcaModel& model) {
  require(x.size() == model.mean.size(), ErrorKind::Argument, "input dimension differs from PCA model");
  return model.components * (x - model.mean);
}

LdaModel lda_fit(const FrameMatrix& frames, std::span<const int> labels, int m) {
  const Eigen::Index N = frames.rows(), n = frames.cols();
  require(static_cast<Eigen::Index>(labels.size()) == N, ErrorKind::Argument,
          "label count differs from frame count");
  if (!frames.allFinite()) fail(ErrorKind::Data, "non-finite value in LDA input");
  int classes = 0;
  for (int l : labels) {
    require(l >= 0, ErrorKind::Argument, "class labels must be non-negative");
    classes = std::max(classes, l + 1);
  }
  require(classes >= 2, ErrorKind::Data, "LDA needs at least two classes");
  require(m >= 1 && m <= classes - 1, ErrorKind::Argument,
          "LDA output dimension must lie in [1, " + std::to_string(classes - 1) + "]");

  LdaModel lda;
  lda.counts.assign(static_cast<std::size_t>(classes), 0);
  lda.class_means = Eigen::MatrixXd::Zero(classes, n);
  for (Eigen::Index i = 0; i < N; ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    ++lda.counts[static_cast<std::size_t>(c)];
    lda.class_means.row(c) += frames.row(i);
  }
  for (int c = 0; c < classes; ++c) {
    const int cnt = lda.counts[static_cast<std::size_t>(c)];
    if (cnt < 2) fail(ErrorKind::Data, "class " + std::to_string(c) + " has fewer than two samples");
    lda.class_means.row(c) /= cnt;
  }
  lda.mean = frames.colwise().mean().transpose();

  Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(n, n), sb = Eigen::MatrixXd::Zero(n, n);
  {
    Eigen::MatrixXd d(N, n);
    for (Eigen::Index i = 0; i < N; ++i) d.row(i) = frames.row(i) - lda.class_means.row(labels[static_cast<std::size_t>(i)]);
    sw.selfadjointView<Eigen::Lower>().rankUpdate(d.transpose());
    sw.triangularView<Eigen::Upper>() = sw.transpose();
  }
  for (int c = 0; c < classes; ++c) {
    const Eigen::VectorXd dm = lda.class_means.row(c).transpose() - lda.mean;
    sb += lda.counts[static_cast<std::size_t>(c)] * dm * dm.transpose();
  }
  const double tw = sw.trace();
  if (sb.trace() <= 1e-12 * std::max(tw, 1e-300))
    fail(ErrorKind::Fit, "all class means coincide; the Fisher objective is degenerate");

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> wchk(sw, Eigen::EigenvaluesOnly);
  if (wchk.eigenvalues()(0) <= 1e-12 * std::max(tw, 1e-300))
    sw.diagonal().array() += 1e-6 * std::max(tw, 1e-300) / static_cast<double>(n);

  const Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(sb, sw);
  if (ges.info() != Eigen::Success) fail(ErrorKind::Numerical, "generalized eigensolver failed");
  lda.projection.resize(n, m);
  lda.eigenvalues.resize(m);
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd v = ges.eigenvectors().col(n - 1 - j);
    v.normalize();
    fix_sign(v);
    lda.projection.col(j) = v;
    lda.eigenvalues(j) = std::max(ges.eigenvalues()(n - 1 - j), 0.0);
  }
  return lda;
}

Eigen::VectorXd lda_transform(const Eigen::VectorXd& x, const LdaModel& model) {
  require(x.size() == model.mean.size(), ErrorKind::Argument, "input dimension differs from LDA model");
  return model.projection.transpose() * (x - model.mean);
}

std::string_view to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::None: return "none";
    case TransformKind::Fa: return "fa";
    case TransformKind::Pca: return "pca";
    case TransformKind::Lda: return "lda";
  }
  return "none";
}

TransformKind parse_transform_kind(std::string_view name) {
  if (name == "none") return TransformKind::None;
  if (name == "fa") return TransformKind::Fa;
  if (name == "pca") return TransformKind::Pca;
  if (name == "lda") return TransformKind::Lda;
  fail(ErrorKind::Config, "unknown transform '" + std::string(name) + "' (none|fa|pca|lda)");
}

FrameMatrix FeatureTransform::apply(const FrameMatrix& frames) const {
  if (kind == TransformKind::None) return frames;
  require(frames.cols() == input_dim(), ErrorKind::Argument,
          "frame dimension " + std::to_string(frames.cols()) + " differs from transform input " +
              std::to_string(input_dim()));
  return (frames.rowwise() - mean.transpose()) * projection;
}

FeatureTransform FeatureTransform::from(const FaModel& m) {
  const Eigen::MatrixXd& w = m.loadings;
  const Eigen::MatrixXd M = w.transpose() * w + m.noise_var * Eigen::MatrixXd::Identity(w.cols(), w.cols());
  FeatureTransform t;
  t.kind = TransformKind::Fa;
  t.mean = m.mean;
  t.projection = M.llt().solve(w.transpose()).transpose();
  return t;
}

FeatureTransform FeatureTransform::from(const PcaModel& m) {
  return {TransformKind::Pca, m.mean, m.components.transpose()};
}

FeatureTransform FeatureTransform::from(const LdaModel& m) {
  return {TransformKind::Lda, m.mean, m.projection};
}

void save_transform(const FeatureTransform& t, const std::filesystem::path& path) {
  BinaryWriter w;
  w.magic(kTransformMagic);
  w.u32(kTransformVersion);
  w.u32(static_cast<std::uint32_t>(t.kind));
  w.u32(static_cast<std::uint32_t>(t.input_dim()));
  w.u32(static_cast<std::uint32_t>(t.output_dim()));
  w.f64s({t.mean.data(), static_cast<std::size_t>(t.mean.size())});
  for (Eigen::Index i = 0; i < t.projection.rows(); ++i)
    for (Eigen::Index j = 0; j < t.projection.cols(); ++j) w.f64(t.projection(i, j));
  w.save(path);
}

FeatureTransform load_transform(const std::filesystem::path& path) {
  auto r = BinaryReader::open(path);
  r.expect_magic(kTransformMagic);
  if (r.u32() != kTransformVersion) fail(ErrorKind::Format, "unsupported transform version in " + path.string());
  const auto kind = r.u32();
  if (kind > 3) fail(ErrorKind::Format, "unknown transform kind in " + path.string());
  const auto n = r.u32(), m = r.u32();
  FeatureTransform t;
  t.kind = static_cast<TransformKind>(kind);
  const auto mean = r.f64s(n);
  t.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), n);
  t.projection.resize(n, m);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < m; ++j) t.projection(i, j) = r.f64();
  if (!r.at_end()) fail(ErrorKind::Format, "trailing bytes in " + path.string());
  return t;
}

}  // namespace scoreid
