#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "scoreid/features.hpp"

namespace scoreid {

/// Diagonal-covariance Gaussian mixture; means and variances are M x D.
struct GmmParams {
  std::vector<double> weights;
  FrameMatrix means;
  FrameMatrix variances;

  int mixtures() const noexcept { return static_cast<int>(weights.size()); }
  int dim() const noexcept { return static_cast<int>(means.cols()); }
  void validate() const;
};

/// Scoring view of a GmmParams with inverse variances and per-component
/// normalizers precomputed. Immutable once built.
class GmmScorer {
 public:
  explicit GmmScorer(const GmmParams& g);

  int dim() const noexcept { return dim_; }
  int mixtures() const noexcept { return mixtures_; }

  /// out[m] = log w_m + log N(x; mu_m, diag var_m)
  void component_terms(const double* x, double* out) const;
  double log_density(const double* x) const;

 private:
  int dim_ = 0;
  int mixtures_ = 0;
  std::vector<double> means_;
  std::vector<double> inv_vars_;
  std::vector<double> bias_;
};

/// Sum over frames of the mixture log-density, via log-sum-exp.
double gmm_loglik(const FrameMatrix& frames, const GmmParams& g);
double gmm_loglik(const FeatureSequence& seq, const GmmParams& g);

/// 1e-3 times the per-dimension variance of the pooled frames, never below
/// an absolute 1e-6.
Eigen::VectorXd variance_floor(const FrameMatrix& frames);

void apply_floor(GmmParams& g, const Eigen::VectorXd& floor);

struct GmmFitResult {
  GmmParams model;
  std::vector<double> trace;  // data log-likelihood before each M-step, then final
};

/// k-means++ seeding, Lloyd refinement, then `iters` EM iterations.
GmmFitResult gmm_fit(const FrameMatrix& frames, int mixtures, int iters, std::uint64_t seed);

/// Pools the rows of several matrices.
FrameMatrix stack_frames(std::span<const FrameMatrix> parts);

}  // namespace scoreid
