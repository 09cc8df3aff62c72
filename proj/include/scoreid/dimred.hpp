#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "scoreid/features.hpp"

namespace scoreid {

/// x = W y + mu + c with c ~ N(0, noise_var I).
struct FaModel {
  Eigen::MatrixXd loadings;  // n x m
  Eigen::VectorXd mean;
  double noise_var = 1.0;

  int input_dim() const noexcept { return static_cast<int>(loadings.rows()); }
  int factors() const noexcept { return static_cast<int>(loadings.cols()); }
};

struct FaFitResult {
  FaModel model;
  std::vector<double> trace;  // log-likelihood entering each EM iteration, then final
};

/// EM for the isotropic-noise factor model started from the leading principal
/// directions, then varimax on the loadings. Requires N > n > m >= 1.
FaFitResult fa_fit(const FrameMatrix& frames, int factors, int iters, std::uint64_t seed);

/// Gaussian log-likelihood of the frames under W W^T + noise_var I.
double fa_loglik(const FrameMatrix& frames, const FaModel& model);

/// Raw varimax criterion: sum over columns of the variance of squared loadings.
double varimax_criterion(const Eigen::MatrixXd& w);

/// Pairwise plane rotations, each solved in closed form, swept until the
/// criterion gains less than `tol`. Appends the criterion after every sweep.
Eigen::MatrixXd varimax(const Eigen::MatrixXd& w, std::vector<double>* trace = nullptr,
                        double tol = 1e-8, int max_sweeps = 200);

/// Posterior mean (W^T W + s I)^-1 W^T (x - mu).
Eigen::VectorXd fa_transform(const Eigen::VectorXd& x, const FaModel& model);

struct PcaModel {
  Eigen::MatrixXd components;  // k x n, orthonormal rows
  Eigen::VectorXd mean;
  Eigen::VectorXd eigenvalues;  // descending
};

/// SVD of the centred frames; eigenvalues use the N-1 normalisation. Each
/// component is signed so its largest-magnitude entry is positive.
PcaModel pca_fit(const FrameMatrix& frames, int k);
Eigen::VectorXd pca_transform(const Eigen::VectorXd& x, const PcaModel& model);

struct LdaModel {
  Eigen::MatrixXd projection;   // n x m, unit columns
  Eigen::MatrixXd class_means;  // c x n
  Eigen::VectorXd mean;
  std::vector<int> counts;
  Eigen::VectorXd eigenvalues;  // top m, descending
};

/// Leading generalized eigenvectors of S_b v = lambda S_W v. Labels are dense
/// class indices 0..c-1.
LdaModel lda_fit(const FrameMatrix& frames, std::span<const int> labels, int m);
Eigen::VectorXd lda_transform(const Eigen::VectorXd& x, const LdaModel& model);

enum class TransformKind { None = 0, Fa = 1, Pca = 2, Lda = 3 };

std::string_view to_string(TransformKind kind);
TransformKind parse_transform_kind(std::string_view name);

/// Any fitted transform reduced to its affine form y = P^T (x - mean).
struct FeatureTransform {
  TransformKind kind = TransformKind::None;
  Eigen::VectorXd mean;
  Eigen::MatrixXd projection;  // n x m

  int input_dim() const noexcept { return static_cast<int>(projection.rows()); }
  int output_dim() const noexcept { return static_cast<int>(projection.cols()); }
  FrameMatrix apply(const FrameMatrix& frames) const;

  static FeatureTransform from(const FaModel& m);
  static FeatureTransform from(const PcaModel& m);
  static FeatureTransform from(const LdaModel& m);
};

/// Versioned little-endian: magic, version, kind tag, n, m (u32), then the
/// mean and the row-major projection as f64.
void save_transform(const FeatureTransform& t, const std::filesystem::path& path);
FeatureTransform load_transform(const std::filesystem::path& path);

}  // namespace scoreid
