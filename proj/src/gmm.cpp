#include "scoreid/gmm.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "scoreid/error.hpp"
#include "scoreid/simd.hpp"

namespace scoreid {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)

void check_finite(const FrameMatrix& frames) {
  if (!frames.allFinite()) fail(ErrorKind::Data, "non-finite value in training frames");
}

struct Moments {
  std::vector<double> occ;
  FrameMatrix sum, sumsq;

  Moments(int mixtures, int dim)
      : occ(static_cast<std::size_t>(mixtures), 0.0),
        sum(FrameMatrix::Zero(mixtures, dim)),
        sumsq(FrameMatrix::Zero(mixtures, dim)) {}
};

// Closed-form M-step; components with no occupancy keep their old values.
void maximize(GmmParams& g, const Moments& acc, const Eigen::VectorXd& floor) {
  double total = 0.0;
  for (double o : acc.occ) total += o;
  for (int m = 0; m < g.mixtures(); ++m) {
    const double o = acc.occ[static_cast<std::size_t>(m)];
    g.weights[static_cast<std::size_t>(m)] = total > 0 ? o / total : g.weights[static_cast<std::size_t>(m)];
    if (o <= 1e-300) continue;
    for (int d = 0; d < g.dim(); ++d) {
      const double mean = acc.sum(m, d) / o;
      g.means(m, d) = mean;
      g.variances(m, d) = std::max(acc.sumsq(m, d) / o - mean * mean, floor(d));
    }
  }
}

}  // namespace

void GmmParams::validate() const {
  require(!weights.empty(), ErrorKind::Argument, "mixture has no components");
  require(means.rows() == mixtures() && variances.rows() == mixtures() &&
              variances.cols() == means.cols() && means.cols() >= 1,
          ErrorKind::Argument, "mixture parameter shapes disagree");
  double s = 0.0;
  for (double w : weights) {
    require(w >= 0.0, ErrorKind::Argument, "negative mixture weight");
    s += w;
  }
  require(std::abs(s - 1.0) <= 1e-9, ErrorKind::Argument, "mixture weights do not sum to 1");
  require((variances.array() > 0.0).all(), ErrorKind::Argument, "non-positive variance");
}

GmmScorer::GmmScorer(const GmmParams& g) : dim_(g.dim()), mixtures_(g.mixtures()) {
  means_.assign(g.means.data(), g.means.data() + g.means.size());
  inv_vars_.resize(means_.size());
  bias_.resize(static_cast<std::size_t>(mixtures_));
  for (int m = 0; m < mixtures_; ++m) {
    double logdet = 0.0;
    for (int d = 0; d < dim_; ++d) {
      const double v = g.variances(m, d);
      inv_vars_[static_cast<std::size_t>(m) * dim_ + d] = 1.0 / v;
      logdet += std::log(v);
    }
    const double w = g.weights[static_cast<std::size_t>(m)];
    bias_[static_cast<std::size_t>(m)] =
        (w > 0 ? std::log(w) : -std::numeric_limits<double>::infinity()) -
        0.5 * (dim_ * kLog2Pi + logdet);
  }
}

void GmmScorer::component_terms(const double* x, double* out) const {
  simd::kernels().diag_gauss_terms(x, means_.data(), inv_vars_.data(), bias_.data(),
                                   static_cast<std::size_t>(dim_),
                                   static_cast<std::size_t>(mixtures_), out);
}

double GmmScorer::log_density(const double* x) const {
  constexpr int kStack = 256;
  if (mixtures_ <= kStack) {
    double terms[kStack];
    component_terms(x, terms);
    return simd::kernels().log_sum_exp(terms, static_cast<std::size_t>(mixtures_));
  }
  std::vector<double> terms(static_cast<std::size_t>(mixtures_));
  component_terms(x, terms.data());
  return simd::kernels().log_sum_exp(terms.data(), terms.size());
}

double gmm_loglik(const FrameMatrix& frames, const GmmParams& g) {
  if (frames.rows() == 0) return 0.0;
  require(frames.cols() == g.dim(), ErrorKind::Argument,
          "frame dimension " + std::to_string(frames.cols()) + " differs from model dimension " +
              std::to_string(g.dim()));
  const GmmScorer scorer(g);
  double total = 0.0;
  for (Eigen::Index t = 0; t < frames.rows(); ++t) total += scorer.log_density(frames.row(t).data());
  return total;
}

double gmm_loglik(const FeatureSequence& seq, const GmmParams& g) {
  return gmm_loglik(seq.frames, g);
}

Eigen::VectorXd variance_floor(const FrameMatrix& frames) {
  const Eigen::Index d = frames.cols();
  Eigen::VectorXd floor = Eigen::VectorXd::Constant(d, 1e-6);
  if (frames.rows() < 2) return floor;
  const Eigen::RowVectorXd mean = frames.colwise().mean();
  const Eigen::RowVectorXd var =
      (frames.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(frames.rows());
  for (Eigen::Index i = 0; i < d; ++i) floor(i) = std::max(1e-3 * var(i), 1e-6);
  return floor;
}

void apply_floor(GmmParams& g, const Eigen::VectorXd& floor) {
  for (int m = 0; m < g.mixtures(); ++m)
    for (int d = 0; d < g.dim(); ++d) g.variances(m, d) = std::max(g.variances(m, d), floor(d));
}

FrameMatrix stack_frames(std::span<const FrameMatrix> parts) {
  Eigen::Index rows = 0, cols = -1;
  for (const auto& p : parts) {
    if (p.rows() == 0) continue;
    if (cols < 0) cols = p.cols();
    require(p.cols() == cols, ErrorKind::Argument, "frame dimensions differ between sequences");
    rows += p.rows();
  }
  FrameMatrix out(rows, std::max<Eigen::Index>(cols, 0));
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    if (p.rows() == 0) continue;
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

GmmFitResult gmm_fit(const FrameMatrix& frames, int mixtures, int iters, std::uint64_t seed) {
  require(mixtures >= 1, ErrorKind::Argument, "mixture count must be positive");
  require(frames.cols() >= 1, ErrorKind::Argument, "frames have no dimensions");
  require(frames.rows() >= mixtures, ErrorKind::Argument,
          "fewer frames (" + std::to_string(frames.rows()) + ") than mixtures (" +
              std::to_string(mixtures) + ")");
  check_finite(frames);

  const auto& kern = simd::kernels();
  const Eigen::Index n = frames.rows();
  const int dim = static_cast<int>(frames.cols());
  const Eigen::VectorXd floor = variance_floor(frames);
  std::mt19937_64 rng(seed);

  // k-means++ seeding
  FrameMatrix centers(mixtures, dim);
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.row(0) = frames.row(pick(rng));
  for (int c = 1; c < mixtures; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = kern.squared_distance(frames.row(i).data(), centers.row(c - 1).data(),
                                             static_cast<std::size_t>(dim));
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], d);
      total += d2[static_cast<std::size_t>(i)];
    }
    Eigen::Index chosen = pick(rng);
    if (total > 0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= d2[static_cast<std::size_t>(i)];
        if (u <= 0) {
          chosen = i;
          break;
        }
      }
    }
    centers.row(c) = frames.row(chosen);
  }

  // Lloyd refinement
  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < 10; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < mixtures; ++c) {
        const double d = kern.squared_distance(frames.row(i).data(), centers.row(c).data(),
                                               static_cast<std::size_t>(dim));
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      changed |= assign[static_cast<std::size_t>(i)] != best;
      assign[static_cast<std::size_t>(i)] = best;
    }
    if (it > 0 && !changed) break;
    FrameMatrix next = FrameMatrix::Zero(mixtures, dim);
    std::vector<double> cnt(static_cast<std::size_t>(mixtures), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      next.row(assign[static_cast<std::size_t>(i)]) += frames.row(i);
      cnt[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])] += 1.0;
    }
    for (int c = 0; c < mixtures; ++c)
      if (cnt[static_cast<std::size_t>(c)] > 0) centers.row(c) = next.row(c) / cnt[static_cast<std::size_t>(c)];
  }

  GmmParams g;
  g.weights.assign(static_cast<std::size_t>(mixtures), 0.0);
  g.means = centers;
  g.variances = FrameMatrix::Zero(mixtures, dim);
  {
    Moments acc(mixtures, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = assign[static_cast<std::size_t>(i)];
      acc.occ[static_cast<std::size_t>(c)] += 1.0;
      kern.accumulate_moments(1.0, frames.row(i).data(), static_cast<std::size_t>(dim),
                              acc.sum.row(c).data(), acc.sumsq.row(c).data());
    }
    for (int c = 0; c < mixtures; ++c)
      for (int d = 0; d < dim; ++d) g.variances(c, d) = floor(d);
    maximize(g, acc, floor);
  }

  GmmFitResult result;
  std::vector<double> terms(static_cast<std::size_t>(mixtures));
  for (int it = 0; it < iters; ++it) {
    const GmmScorer scorer(g);
    Moments acc(mixtures, dim);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double* x = frames.row(i).data();
      scorer.component_terms(x, terms.data());
      const double lse = kern.log_sum_exp(terms.data(), terms.size());
      ll += lse;
      for (int c = 0; c < mixtures; ++c) {
        const double r = std::exp(terms[static_cast<std::size_t>(c)] - lse);
        if (r < 1e-300) continue;
        acc.occ[static_cast<std::size_t>(c)] += r;
        kern.accumulate_moments(r, x, static_cast<std::size_t>(dim), acc.sum.row(c).data(),
                                acc.sumsq.row(c).data());
      }
    }
    if (!std::isfinite(ll)) fail(ErrorKind::Numerical, "GMM log-likelihood is not finite");
    result.trace.push_back(ll);
    maximize(g, acc, floor);
  }
  result.trace.push_back(gmm_loglik(frames, g));
  result.model = std::move(g);
  return result;
}

}  // namespace scoreid
