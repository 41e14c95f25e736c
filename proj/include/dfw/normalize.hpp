#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <memory>
#include <optional>
#include <string>

#include "dfw/classical.hpp"
#include "dfw/diagnostics.hpp"
#include "dfw/linalg.hpp"
#include "dfw/models.hpp"
#include "dfw/sim.hpp"

namespace dfw {

/// Unnormalized log-density evaluated on a batch, one point per column.
using LogDensityFn = std::function<Vec(const Mat&)>;

/// Midpoint rule on [l, r] with I cells, returned as log Z together with the
/// first two moments of the normalized density.
struct QuadResult {
  double log_z = 0.0;
  double mean = 0.0;
  double var = 0.0;
};
QuadResult quad_log_normalize(const LogDensityFn& logdensity, double l, double r, int points);

/// Z = ((r - l) / I) sum_i exp(logdensity(x_i)) over cell midpoints x_i,
/// summed with a max shift. Throws NumericalDivergence if Z is not finite.
double quad_normalize(const std::function<double(double)>& logdensity, double l, double r, int points);

enum class ProposalKind { kEkfBased, kWideGaussian };

/// Gaussian importance proposal. A wide proposal carries a fixed sample set
/// that is shared by every observation sequence at the same k.
struct Proposal {
  ProposalKind kind = ProposalKind::kWideGaussian;
  Gaussian q;
  double inflation = 1.0;
  std::shared_ptr<const Mat> samples;   // optional reusable draws
  std::shared_ptr<const Vec> log_q;     // log q at `samples`
};

struct IsResult {
  double log_z = 0.0;
  double z_se = 0.0;  // standard error of Z-hat
  double ess = 0.0;
  Vec mean;
};

/// log Z-hat = logsumexp_i(log p(x_i) - log q(x_i)) - log I with x_i ~ q,
/// plus the self-normalized mean and the effective sample size
/// (sum w)^2 / sum w^2. ESS below ess_floor records a "low_ess" event.
/// All-zero weights throw NumericalDivergence ("proposal mismatch").
IsResult is_normalize(const LogDensityFn& logdensity, const Proposal& proposal, int samples, Rng& rng,
                      EventLog* log = nullptr, double ess_floor = 10.0);

/// Unconditional mean and covariance of S_{t_k}, k = 0..K, estimated once
/// from simulated signal paths and then read-only.
class UnconditionalMoments {
 public:
  UnconditionalMoments(const Example& ex, const TimeGrid& grid, int paths, Rng rng);
  const Moments& at(int k) const { return moments_.at(k); }
  int size() const { return static_cast<int>(moments_.size()); }

 private:
  std::vector<Moments> moments_;
};

/// Observation-independent proposal N(m_k, inflation * C_k) from the
/// unconditional moments. Repeated calls with the same (k, samples, seed)
/// return the same draws, so every sequence reuses one sample set.
class WideProposalCache {
 public:
  WideProposalCache(std::shared_ptr<const UnconditionalMoments> moments, double inflation, int samples,
                    std::uint64_t seed);
  Proposal get(int k);
  double inflation() const { return inflation_; }
  const UnconditionalMoments& moments() const { return *moments_; }

 private:
  std::shared_ptr<const UnconditionalMoments> moments_;
  double inflation_;
  int samples_;
  std::uint64_t seed_;
  std::map<int, Proposal> cache_;
  std::mutex mutex_;
};

Proposal build_wide_proposal(const UnconditionalMoments& moments, int k, double inflation);

/// Gaussian proposal from the EKF run on o_{1:k} (columns of obs_seq), with
/// covariance scaled by `inflation`. If the EKF diverges, falls back to the
/// wide proposal from `fallback` and records a "proposal_fallback" event;
/// without a fallback the divergence propagates.
Proposal build_ekf_proposal(const Example& ex, const Mat& obs_seq, const TimeGrid& grid, int k,
                            double inflation, WideProposalCache* fallback = nullptr,
                            EventLog* log = nullptr);
Proposal build_ekf_proposal(const GaussianBelief& posterior, double inflation);

/// EKF posterior beliefs for k = 1..K (entry k-1).
std::vector<GaussianBelief> ekf_run(const Example& ex, const Mat& obs_seq, const TimeGrid& grid,
                                    EventLog* log = nullptr);

/// 1D quadrature domain: unconditional mean +- 8 standard deviations.
std::pair<double, double> quad_domain(const Moments& unconditional);

enum class NormMethod { kQuad, kIekf, kIg };
NormMethod norm_method_from_string(const std::string& s);
std::string to_string(NormMethod m);

/// Normalized estimate of a filtering density: log Z and the posterior mean.
struct DensityEstimate {
  double log_z = 0.0;
  double z_se = 0.0;
  double ess = 0.0;
  Vec mean;
};

/// Normalization backend for one example: quadrature on the unconditional
/// domain (d = 1), EKF-based importance sampling, or the wide Gaussian.
class Normalizer {
 public:
  struct Options {
    NormMethod method = NormMethod::kQuad;
    int samples = 1000;
    double inflation = 0.0;  // 0 selects the default (2 for I-EKF, 3 for I-G)
    int moment_paths = 100000;
    std::uint64_t seed = 0;
  };

  /// `grid` is used for the unconditional moments and the EKF; its substeps
  /// set the integration resolution.
  Normalizer(const Example& ex, const TimeGrid& grid, Options opt, EventLog* log = nullptr);

  /// Normalizes logdensity for the filter at t_k given obs_seq (d' x k').
  DensityEstimate estimate(const LogDensityFn& logdensity, int k, const Mat& obs_seq, Rng& rng) const;

  const Options& options() const { return opt_; }
  const UnconditionalMoments& unconditional() const { return *moments_; }

 private:
  const Example* ex_;
  TimeGrid grid_;
  Options opt_;
  EventLog* log_;
  std::shared_ptr<const UnconditionalMoments> moments_;
  std::unique_ptr<WideProposalCache> wide_;
};

}  // namespace dfw
