#pragma once

#include <vector>

#include "dfw/diagnostics.hpp"
#include "dfw/linalg.hpp"
#include "dfw/models.hpp"
#include "dfw/rng.hpp"

namespace dfw {

/// Mean and covariance of a Gaussian filter (KF, EKF).
struct GaussianBelief {
  Vec mean;
  Mat cov;

  static GaussianBelief from(const InitialDistribution& d) { return {d.mean(), d.covariance()}; }
};

/// Integrates m' = mu(m), P' = A P + P A^T + a(m) with A = D mu(m) over a
/// time span dt using `substeps` classical RK4 steps. Exact Kalman
/// prediction when mu is linear and sigma constant.
GaussianBelief moment_predict(const GaussianBelief& b, const SdeModel& model, double dt, int substeps);

/// Linear-Gaussian Bayes update with gain K = P H^T (H P H^T + R)^{-1}.
GaussianBelief linear_update(const GaussianBelief& b, const Mat& h, const Vec& innovation, const Mat& r,
                             EventLog* log = nullptr);

/// Kalman filter step over one observation interval. Throws
/// std::invalid_argument for non-linear drift or observation.
GaussianBelief kf_step(const GaussianBelief& b, const Example& ex, double dt, int substeps, const Vec& o,
                       EventLog* log = nullptr);

/// Continuous-discrete EKF step: moment ODEs linearized at the running mean,
/// then the gain update linearized at the predicted mean. A non-finite or
/// indefinite covariance throws NumericalDivergence.
GaussianBelief ekf_step(const GaussianBelief& b, const Example& ex, double dt, int substeps, const Vec& o,
                        EventLog* log = nullptr);

/// Stochastic (perturbed-observation) EnKF step on a d x M ensemble.
Mat enkf_step(const Mat& ensemble, const Example& ex, double dt, int substeps, const Vec& o, Rng& rng,
              EventLog* log = nullptr);

enum class Resampling { kSystematic, kMultinomial };

/// Particles d x M with log-weights. After pf_step the weights are uniform.
struct ParticleCloud {
  Mat particles;
  Vec log_weights;

  static ParticleCloud from(const InitialDistribution& d, Eigen::Index m, Rng& rng);
  Eigen::Index size() const { return particles.cols(); }
  Vec weights() const { return log_weights.array().exp().matrix(); }
};

/// Adds log L(o | x_i) to the log-weights and normalizes them so their
/// logsumexp is 0. Non-finite particles get weight zero. Throws
/// WeightCollapse when every weight is zero.
void pf_reweight(ParticleCloud& cloud, const ObservationModel& obs, const Vec& o);

/// Ancestor indices. `weights` must be normalized.
std::vector<Eigen::Index> systematic_resample(const Vec& weights, Eigen::Index m, Rng& rng);
std::vector<Eigen::Index> multinomial_resample(const Vec& weights, Eigen::Index m, Rng& rng);
void resample(ParticleCloud& cloud, Rng& rng, Resampling scheme = Resampling::kSystematic);

/// Bootstrap PF step: propagate by Euler-Maruyama, reweight, resample. The
/// weighted cloud before resampling is written to *weighted when given.
ParticleCloud pf_step(const ParticleCloud& cloud, const Example& ex, double dt, int substeps, const Vec& o,
                      Rng& rng, ParticleCloud* weighted = nullptr,
                      Resampling scheme = Resampling::kSystematic);

Moments cloud_moments(const ParticleCloud& cloud);
Moments ensemble_moments(const Mat& ensemble);

}  // namespace dfw
