#include "scoreid/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <limits>
#include <string>

#include "scoreid/error.hpp"
#include "scoreid/parallel.hpp"
#include "scoreid/simd.hpp"

namespace scoreid {
namespace {

constexpr std::string_view kHmmMagic{"SIDHMM\0\0", 8};
constexpr std::uint32_t kHmmVersion = 1;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double p) { return p > 0 ? std::log(p) : kNegInf; }

double lse2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

void check_dims(const FrameMatrix& frames, const HmmParams& model) {
  require(frames.cols() == model.dim(), ErrorKind::Argument,
          "frame dimension " + std::to_string(frames.cols()) + " differs from model dimension " +
              std::to_string(model.dim()));
}

// Forward/backward tables for one sequence.
struct Lattice {
  Eigen::MatrixXd alpha, beta;
  double loglik = kNegInf;
};

Lattice forward_backward(const Eigen::MatrixXd& e, const LogTopology& topo) {
  const Eigen::Index T = e.rows(), S = e.cols();
  Lattice L;
  L.alpha = Eigen::MatrixXd::Constant(T, S, kNegInf);
  L.beta = Eigen::MatrixXd::Constant(T, S, kNegInf);
  for (Eigen::Index s = 0; s < S; ++s) L.alpha(0, s) = topo.log_initial(s) + e(0, s);
  for (Eigen::Index t = 1; t < T; ++t)
    for (Eigen::Index j = 0; j < S; ++j) {
      double acc = kNegInf;
      for (Eigen::Index i = 0; i < S; ++i) {
        const double a = topo.log_transitions(i, j);
        if (a == kNegInf || L.alpha(t - 1, i) == kNegInf) continue;
        acc = lse2(acc, L.alpha(t - 1, i) + a);
      }
      L.alpha(t, j) = acc == kNegInf ? kNegInf : acc + e(t, j);
    }
  for (Eigen::Index s = 0; s < S; ++s)
    if (topo.final_states[static_cast<std::size_t>(s)]) {
      L.beta(T - 1, s) = 0.0;
      L.loglik = lse2(L.loglik, L.alpha(T - 1, s));
    }
  for (Eigen::Index t = T - 2; t >= 0; --t)
    for (Eigen::Index i = 0; i < S; ++i) {
      double acc = kNegInf;
      for (Eigen::Index j = 0; j < S; ++j) {
        const double a = topo.log_transitions(i, j);
        if (a == kNegInf || L.beta(t + 1, j) == kNegInf) continue;
        acc = lse2(acc, a + e(t + 1, j) + L.beta(t + 1, j));
      }
      L.beta(t, i) = acc;
    }
  return L;
}

struct StateAccum {
  std::vector<double> occ;
  FrameMatrix sum, sumsq;
};

struct Accumulator {
  std::vector<StateAccum> states;
  Eigen::MatrixXd trans;
  double loglik = 0.0;
  int used = 0;

  Accumulator(int S, int M, int D) : trans(Eigen::MatrixXd::Zero(S, S)) {
    states.resize(static_cast<std::size_t>(S));
    for (auto& st : states) {
      st.occ.assign(static_cast<std::size_t>(M), 0.0);
      st.sum = FrameMatrix::Zero(M, D);
      st.sumsq = FrameMatrix::Zero(M, D);
    }
  }

  void add(const Accumulator& o) {
    for (std::size_t s = 0; s < states.size(); ++s) {
      for (std::size_t m = 0; m < states[s].occ.size(); ++m) states[s].occ[m] += o.states[s].occ[m];
      states[s].sum += o.states[s].sum;
      states[s].sumsq += o.states[s].sumsq;
    }
    trans += o.trans;
    loglik += o.loglik;
    used += o.used;
  }
};

void accumulate_sequence(const FrameMatrix& x, const HmmParams& model,
                         const std::vector<GmmScorer>& scorers, const LogTopology& topo,
                         Accumulator& acc) {
  const int T = static_cast<int>(x.rows()), S = model.num_states(), M = model.mixtures();
  const auto D = static_cast<std::size_t>(model.dim());
  const auto& kern = simd::kernels();

  std::vector<double> comp(static_cast<std::size_t>(T) * S * M);
  Eigen::MatrixXd e(T, S);
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      double* c = &comp[(static_cast<std::size_t>(t) * S + s) * M];
      scorers[static_cast<std::size_t>(s)].component_terms(x.row(t).data(), c);
      e(t, s) = kern.log_sum_exp(c, static_cast<std::size_t>(M));
    }

  const Lattice L = forward_backward(e, topo);
  if (std::isnan(L.loglik)) fail(ErrorKind::Numerical, "Baum-Welch log-likelihood is NaN");
  if (L.loglik == kNegInf) return;  // sequence admits no path
  acc.loglik += L.loglik;
  ++acc.used;

  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      const double lg = L.alpha(t, s) + L.beta(t, s) - L.loglik;
      if (lg < -700.0) continue;
      const double gamma = std::exp(lg);
      const double* c = &comp[(static_cast<std::size_t>(t) * S + s) * M];
      auto& st = acc.states[static_cast<std::size_t>(s)];
      for (int m = 0; m < M; ++m) {
        const double r = gamma * std::exp(c[m] - e(t, s));
        if (r < 1e-300) continue;
        st.occ[static_cast<std::size_t>(m)] += r;
        kern.accumulate_moments(r, x.row(t).data(), D, st.sum.row(m).data(), st.sumsq.row(m).data());
      }
    }

  for (int t = 0; t + 1 < T; ++t)
    for (int i = 0; i < S; ++i) {
      if (L.alpha(t, i) == kNegInf) continue;
      for (int j = 0; j < S; ++j) {
        const double a = topo.log_transitions(i, j);
        if (a == kNegInf) continue;
        const double lx = L.alpha(t, i) + a + e(t + 1, j) + L.beta(t + 1, j) - L.loglik;
        if (lx < -700.0) continue;
        acc.trans(i, j) += std::exp(lx);
      }
    }
}

void maximize(HmmParams& model, const Accumulator& acc, const Eigen::VectorXd& floor) {
  const int S = model.num_states();
  for (int s = 0; s < S; ++s) {
    auto& g = model.emissions[static_cast<std::size_t>(s)];
    const auto& st = acc.states[static_cast<std::size_t>(s)];
    double total = 0.0;
    for (double o : st.occ) total += o;
    if (total <= 1e-300) continue;
    for (int m = 0; m < g.mixtures(); ++m) {
      const double o = st.occ[static_cast<std::size_t>(m)];
      g.weights[static_cast<std::size_t>(m)] = o / total;
      if (o <= 1e-300) continue;
      for (int d = 0; d < g.dim(); ++d) {
        const double mean = st.sum(m, d) / o;
        g.means(m, d) = mean;
        g.variances(m, d) = std::max(st.sumsq(m, d) / o - mean * mean, floor(d));
      }
    }
  }
  for (int i = 0; i < S; ++i) {
    const double row = acc.trans.row(i).sum();
    if (row <= 1e-300) continue;
    for (int j = 0; j < S; ++j) model.transitions(i, j) = acc.trans(i, j) / row;
  }
}

Accumulator expectation(std::span<const FrameMatrix> seqs, const HmmParams& model) {
  const int S = model.num_states(), M = model.mixtures(), D = model.dim();
  std::vector<GmmScorer> scorers;
  for (const auto& g : model.emissions) scorers.emplace_back(g);
  const LogTopology topo = topology_of(model);

  // Fixed chunking keeps the reduction order independent of the worker count.
  const std::size_t n = seqs.size();
  const std::size_t chunks = std::min<std::size_t>(n, 16);
  std::vector<Accumulator> parts(chunks, Accumulator(S, M, D));
  parallel_for(chunks, [&](std::size_t c) {
    for (std::size_t i = c * n / chunks; i < (c + 1) * n / chunks; ++i)
      accumulate_sequence(seqs[i], model, scorers, topo, parts[c]);
  });
  Accumulator total(S, M, D);
  for (const auto& p : parts) total.add(p);
  return total;
}

}  // namespace

void HmmParams::validate() const {
  const int S = num_states();
  require(S >= 1, ErrorKind::Argument, "HMM has no states");
  require(static_cast<int>(initial.size()) == S && transitions.rows() == S && transitions.cols() == S,
          ErrorKind::Argument, "HMM parameter shapes disagree");
  for (const auto& g : emissions) {
    g.validate();
    require(g.dim() == dim(), ErrorKind::Argument, "state emission dimensions differ");
  }
  double pi = 0.0;
  for (double p : initial) pi += p;
  require(std::abs(pi - 1.0) <= 1e-9, ErrorKind::Argument, "initial probabilities do not sum to 1");
  for (int i = 0; i < S; ++i)
    require(std::abs(transitions.row(i).sum() - 1.0) <= 1e-9 && (transitions.row(i).array() >= 0).all(),
            ErrorKind::Argument, "transition row " + std::to_string(i) + " is not stochastic");
}

HmmParams wrap_as_hmm(const GmmParams& g) {
  HmmParams h;
  h.initial = {1.0};
  h.transitions = Eigen::MatrixXd::Ones(1, 1);
  h.emissions = {g};
  return h;
}

LogTopology topology_of(const HmmParams& model) {
  const int S = model.num_states();
  LogTopology t;
  t.log_initial.resize(S);
  t.log_transitions.resize(S, S);
  for (int s = 0; s < S; ++s) t.log_initial(s) = safe_log(model.initial[static_cast<std::size_t>(s)]);
  for (int i = 0; i < S; ++i)
    for (int j = 0; j < S; ++j) t.log_transitions(i, j) = safe_log(model.transitions(i, j));
  t.final_states.assign(static_cast<std::size_t>(S), false);
  t.final_states.back() = true;
  return t;
}

Eigen::MatrixXd emission_log_densities(const FrameMatrix& frames, const HmmParams& model) {
  check_dims(frames, model);
  Eigen::MatrixXd e(frames.rows(), model.num_states());
  for (int s = 0; s < model.num_states(); ++s) {
    const GmmScorer scorer(model.emissions[static_cast<std::size_t>(s)]);
    for (Eigen::Index t = 0; t < frames.rows(); ++t) e(t, s) = scorer.log_density(frames.row(t).data());
  }
  return e;
}

ViterbiResult viterbi_decode(const Eigen::MatrixXd& e, const LogTopology& topo) {
  const Eigen::Index T = e.rows(), S = e.cols();
  require(T >= 1, ErrorKind::Argument, "cannot decode an empty sequence");
  Eigen::MatrixXd delta = Eigen::MatrixXd::Constant(T, S, kNegInf);
  Eigen::MatrixXi back = Eigen::MatrixXi::Constant(T, S, -1);
  for (Eigen::Index s = 0; s < S; ++s) delta(0, s) = topo.log_initial(s) + e(0, s);
  for (Eigen::Index t = 1; t < T; ++t)
    for (Eigen::Index j = 0; j < S; ++j) {
      double best = kNegInf;
      int arg = -1;
      for (Eigen::Index i = 0; i < S; ++i) {
        const double a = topo.log_transitions(i, j);
        if (a == kNegInf || delta(t - 1, i) == kNegInf) continue;
        const double v = delta(t - 1, i) + a;
        if (v > best) {
          best = v;
          arg = static_cast<int>(i);
        }
      }
      if (arg >= 0) {
        delta(t, j) = best + e(t, j);
        back(t, j) = arg;
      }
    }
  ViterbiResult r;
  r.log_likelihood = kNegInf;
  int last = -1;
  for (Eigen::Index s = 0; s < S; ++s)
    if (topo.final_states[static_cast<std::size_t>(s)] && delta(T - 1, s) > r.log_likelihood) {
      r.log_likelihood = delta(T - 1, s);
      last = static_cast<int>(s);
    }
  if (last < 0) return r;
  r.path.assign(static_cast<std::size_t>(T), 0);
  r.path[static_cast<std::size_t>(T - 1)] = last;
  for (Eigen::Index t = T - 1; t > 0; --t)
    r.path[static_cast<std::size_t>(t - 1)] = back(t, r.path[static_cast<std::size_t>(t)]);
  return r;
}

double forward_score(const Eigen::MatrixXd& e, const LogTopology& topo) {
  require(e.rows() >= 1, ErrorKind::Argument, "cannot score an empty sequence");
  const Eigen::Index T = e.rows(), S = e.cols();
  Eigen::VectorXd alpha(S), next(S);
  for (Eigen::Index s = 0; s < S; ++s) alpha(s) = topo.log_initial(s) + e(0, s);
  for (Eigen::Index t = 1; t < T; ++t) {
    for (Eigen::Index j = 0; j < S; ++j) {
      double acc = kNegInf;
      for (Eigen::Index i = 0; i < S; ++i) {
        const double a = topo.log_transitions(i, j);
        if (a == kNegInf || alpha(i) == kNegInf) continue;
        acc = lse2(acc, alpha(i) + a);
      }
      next(j) = acc == kNegInf ? kNegInf : acc + e(t, j);
    }
    alpha.swap(next);
  }
  double ll = kNegInf;
  for (Eigen::Index s = 0; s < S; ++s)
    if (topo.final_states[static_cast<std::size_t>(s)]) ll = lse2(ll, alpha(s));
  return ll;
}

ViterbiResult viterbi_loglik(const FrameMatrix& frames, const HmmParams& model) {
  return viterbi_decode(emission_log_densities(frames, model), topology_of(model));
}

double forward_loglik(const FrameMatrix& frames, const HmmParams& model) {
  return forward_score(emission_log_densities(frames, model), topology_of(model));
}

HmmParams hmm_init_flat(std::span<const FrameMatrix> seqs, int states) {
  require(!seqs.empty(), ErrorKind::Argument, "no training sequences");
  require(states >= 1, ErrorKind::Argument, "state count must be positive");
  const Eigen::Index D = seqs.front().cols();
  std::vector<std::vector<FrameMatrix>> parts(static_cast<std::size_t>(states));
  for (const auto& seq : seqs) {
    require(seq.cols() == D, ErrorKind::Argument, "training sequences differ in dimension");
    if (seq.rows() < states)
      fail(ErrorKind::Data, "sequence of length " + std::to_string(seq.rows()) + " is shorter than " +
                                std::to_string(states) + " states");
    if (!seq.allFinite()) fail(ErrorKind::Data, "non-finite value in training frames");
    const Eigen::Index T = seq.rows();
    for (int s = 0; s < states; ++s) {
      const Eigen::Index a = s * T / states, b = (s + 1) * T / states;
      parts[static_cast<std::size_t>(s)].push_back(seq.middleRows(a, b - a));
    }
  }
  const Eigen::VectorXd floor = variance_floor(stack_frames(seqs));

  HmmParams h;
  h.initial.assign(static_cast<std::size_t>(states), 0.0);
  h.initial[0] = 1.0;
  h.transitions = Eigen::MatrixXd::Zero(states, states);
  for (int s = 0; s < states; ++s) {
    if (s + 1 < states) {
      h.transitions(s, s) = 0.6;
      h.transitions(s, s + 1) = 0.4;
    } else {
      h.transitions(s, s) = 1.0;
    }
    const FrameMatrix pool = stack_frames(parts[static_cast<std::size_t>(s)]);
    const Eigen::RowVectorXd mean = pool.colwise().mean();
    GmmParams g;
    g.weights = {1.0};
    g.means = mean;
    g.variances = (pool.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(pool.rows());
    apply_floor(g, floor);
    h.emissions.push_back(std::move(g));
  }
  return h;
}

void split_mixtures(HmmParams& model, int target, double offset) {
  for (auto& g : model.emissions) {
    while (g.mixtures() < target) {
      const int M = g.mixtures();
      int heavy = 0;
      for (int m = 1; m < M; ++m)
        if (g.weights[static_cast<std::size_t>(m)] > g.weights[static_cast<std::size_t>(heavy)]) heavy = m;
      FrameMatrix means(M + 1, g.dim()), vars(M + 1, g.dim());
      means.topRows(M) = g.means;
      vars.topRows(M) = g.variances;
      const Eigen::RowVectorXd sd = g.variances.row(heavy).array().sqrt();
      means.row(M) = g.means.row(heavy) - offset * sd;
      means.row(heavy) = g.means.row(heavy) + offset * sd;
      vars.row(M) = g.variances.row(heavy);
      g.weights[static_cast<std::size_t>(heavy)] *= 0.5;
      g.weights.push_back(g.weights[static_cast<std::size_t>(heavy)]);
      g.means = std::move(means);
      g.variances = std::move(vars);
    }
  }
}

BaumWelchResult baum_welch(std::span<const FrameMatrix> seqs, HmmParams model,
                           const BaumWelchConfig& cfg) {
  require(!seqs.empty(), ErrorKind::Argument, "Baum-Welch needs at least one sequence");
  model.validate();
  for (const auto& s : seqs) {
    check_dims(s, model);
    if (!s.allFinite()) fail(ErrorKind::Data, "non-finite value in training frames");
  }
  const Eigen::VectorXd floor = variance_floor(stack_frames(seqs));
  const int target = std::max(cfg.mixture_target, model.mixtures());

  BaumWelchResult result;
  for (;;) {
    const bool final_stage = model.mixtures() >= target;
    const int iters = final_stage ? cfg.iterations : cfg.stage_iterations;
    for (int it = 0; it < iters; ++it) {
      const Accumulator acc = expectation(seqs, model);
      if (acc.used == 0) fail(ErrorKind::Data, "no training sequence admits a path through the model");
      if (!std::isfinite(acc.loglik)) fail(ErrorKind::Numerical, "Baum-Welch log-likelihood is not finite");
      result.trace.push_back({model.mixtures(), acc.loglik});
      maximize(model, acc, floor);
    }
    if (final_stage) break;
    split_mixtures(model, std::min(target, 2 * model.mixtures()), cfg.split_offset);
  }
  const Accumulator last = expectation(seqs, model);
  if (!std::isfinite(last.loglik)) fail(ErrorKind::Numerical, "Baum-Welch log-likelihood is not finite");
  result.trace.push_back({model.mixtures(), last.loglik});
  result.model = std::move(model);
  return result;
}

void write_hmm(BinaryWriter& w, const HmmParams& model) {
  model.validate();
  const int S = model.num_states(), M = model.mixtures(), D = model.dim();
  for (const auto& g : model.emissions)
    require(g.mixtures() == M, ErrorKind::Argument, "states must share the mixture count");
  w.magic(kHmmMagic);
  w.u32(kHmmVersion);
  w.u32(static_cast<std::uint32_t>(D));
  w.u32(static_cast<std::uint32_t>(S));
  w.u32(static_cast<std::uint32_t>(M));
  w.f64s(model.initial);
  for (int i = 0; i < S; ++i)
    for (int j = 0; j < S; ++j) w.f64(model.transitions(i, j));
  for (const auto& g : model.emissions) {
    w.f64s(g.weights);
    w.f64s({g.means.data(), static_cast<std::size_t>(g.means.size())});
    w.f64s({g.variances.data(), static_cast<std::size_t>(g.variances.size())});
  }
}

HmmParams read_hmm(BinaryReader& r) {
  r.expect_magic(kHmmMagic);
  if (r.u32() != kHmmVersion) fail(ErrorKind::Format, "unsupported model version in " + r.origin());
  const auto D = r.u32(), S = r.u32(), M = r.u32();
  if (D == 0 || S == 0 || M == 0 || D > 65536 || S > 4096 || M > 65536)
    fail(ErrorKind::Format, "implausible model dimensions in " + r.origin());
  HmmParams h;
  h.initial = r.f64s(S);
  h.transitions.resize(S, S);
  for (std::uint32_t i = 0; i < S; ++i)
    for (std::uint32_t j = 0; j < S; ++j) h.transitions(i, j) = r.f64();
  for (std::uint32_t s = 0; s < S; ++s) {
    GmmParams g;
    g.weights = r.f64s(M);
    g.means.resize(M, D);
    g.variances.resize(M, D);
    auto mv = r.f64s(static_cast<std::size_t>(M) * D);
    std::copy(mv.begin(), mv.end(), g.means.data());
    mv = r.f64s(static_cast<std::size_t>(M) * D);
    std::copy(mv.begin(), mv.end(), g.variances.data());
    h.emissions.push_back(std::move(g));
  }
  try {
    h.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Format, "invalid model in " + r.origin() + ": " + e.what());
  }
  return h;
}

void save_hmm(const HmmParams& model, const std::filesystem::path& path) {
  BinaryWriter w;
  write_hmm(w, model);
  w.save(path);
}

HmmParams load_hmm(const std::filesystem::path& path) {
  auto r = BinaryReader::open(path);
  HmmParams h = read_hmm(r);
  if (!r.at_end()) fail(ErrorKind::Format, "trailing bytes in " + path.string());
  return h;
}

}  // namespace scoreid
