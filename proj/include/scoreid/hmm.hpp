#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <span>
#include <vector>

#include "scoreid/binary_io.hpp"
#include "scoreid/gmm.hpp"

namespace scoreid {

/// Left-to-right HMM with one diagonal GMM per state. Scoring requires the
/// path to start in the first state and end in the last one.
struct HmmParams {
  std::vector<double> initial;
  Eigen::MatrixXd transitions;  // S x S, row-stochastic
  std::vector<GmmParams> emissions;

  int num_states() const noexcept { return static_cast<int>(emissions.size()); }
  int dim() const noexcept { return emissions.empty() ? 0 : emissions.front().dim(); }
  int mixtures() const noexcept { return emissions.empty() ? 0 : emissions.front().mixtures(); }
  void validate() const;
};

/// One-state HMM whose only transition is the self-loop.
HmmParams wrap_as_hmm(const GmmParams& g);

/// Generic log-domain trellis description: any state may be initial or final
/// as given; -inf marks forbidden moves.
struct LogTopology {
  Eigen::VectorXd log_initial;
  Eigen::MatrixXd log_transitions;
  std::vector<bool> final_states;
};

LogTopology topology_of(const HmmParams& model);

/// T x S log emission densities.
Eigen::MatrixXd emission_log_densities(const FrameMatrix& frames, const HmmParams& model);

struct ViterbiResult {
  double log_likelihood = 0.0;
  std::vector<int> path;
};

/// Max-product decoding over a precomputed emission matrix. Ties go to the
/// lower state index. No admissible path gives -inf and an empty path.
ViterbiResult viterbi_decode(const Eigen::MatrixXd& log_emit, const LogTopology& topo);
double forward_score(const Eigen::MatrixXd& log_emit, const LogTopology& topo);

ViterbiResult viterbi_loglik(const FrameMatrix& frames, const HmmParams& model);
double forward_loglik(const FrameMatrix& frames, const HmmParams& model);

/// Equal-length segmentation of every sequence into S chunks; state s starts
/// as a single Gaussian over chunk s. Self-loop 0.6 / advance 0.4, last state 1.
HmmParams hmm_init_flat(std::span<const FrameMatrix> seqs, int states);

struct BaumWelchConfig {
  int iterations = 10;        // at the final mixture count
  int stage_iterations = 5;   // before each split
  int mixture_target = 1;
  double split_offset = 0.2;  // in standard deviations
};

struct TraceEntry {
  int mixtures = 0;
  double log_likelihood = 0.0;
};

struct BaumWelchResult {
  HmmParams model;
  /// Total log-likelihood of the model entering each E-step, plus the final
  /// model. Entries with equal `mixtures` belong to one EM stage.
  std::vector<TraceEntry> trace;
};

BaumWelchResult baum_welch(std::span<const FrameMatrix> seqs, HmmParams model,
                           const BaumWelchConfig& cfg);

/// Splits the heaviest components of every state until each holds `target`.
void split_mixtures(HmmParams& model, int target, double offset);

/// Versioned little-endian model record: magic, version, D, S, M (u32), then
/// pi, A, and per state the weights, means and variances as f64.
void write_hmm(BinaryWriter& w, const HmmParams& model);
HmmParams read_hmm(BinaryReader& r);
void save_hmm(const HmmParams& model, const std::filesystem::path& path);
HmmParams load_hmm(const std::filesystem::path& path);

}  // namespace scoreid
