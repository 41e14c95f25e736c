#include "dfw/classical.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "dfw/sim.hpp"

namespace dfw {
namespace {

struct MomentRate {
  Vec dm;
  Mat dp;
};

MomentRate moment_rate(const SdeModel& model, const Vec& m, const Mat& p) {
  const Mat a = model.drift_jacobian(m);
  Mat dp = a * p;
  dp += dp.transpose().eval();
  dp += model.covariance_at(m);
  return {model.drift_at(m), std::move(dp)};
}

void check_belief(const GaussianBelief& b, const char* where) {
  if (!b.mean.allFinite() || !b.cov.allFinite()) {
    throw NumericalDivergence(std::string(where) + ": non-finite moments");
  }
}

}  // namespace

GaussianBelief moment_predict(const GaussianBelief& b, const SdeModel& model, double dt, int substeps) {
  const double h = dt / substeps;
  Vec m = b.mean;
  Mat p = b.cov;
  for (int s = 0; s < substeps; ++s) {
    const auto k1 = moment_rate(model, m, p);
    const auto k2 = moment_rate(model, m + 0.5 * h * k1.dm, p + 0.5 * h * k1.dp);
    const auto k3 = moment_rate(model, m + 0.5 * h * k2.dm, p + 0.5 * h * k2.dp);
    const auto k4 = moment_rate(model, m + h * k3.dm, p + h * k3.dp);
    m += h / 6.0 * (k1.dm + 2.0 * k2.dm + 2.0 * k3.dm + k4.dm);
    p += h / 6.0 * (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp);
    symmetrize(p);
  }
  GaussianBelief out{std::move(m), std::move(p)};
  check_belief(out, "moment_predict");
  return out;
}

GaussianBelief linear_update(const GaussianBelief& b, const Mat& h, const Vec& innovation, const Mat& r,
                             EventLog* log) {
  const Mat ph = b.cov * h.transpose();
  const Mat s = h * ph + r;
  const auto llt = robust_cholesky(s, log, "innovation covariance");
  const Mat gain = llt.solve(ph.transpose()).transpose();
  GaussianBelief out{b.mean + gain * innovation, b.cov - gain * ph.transpose()};
  symmetrize(out.cov);
  check_belief(out, "update");
  return out;
}

GaussianBelief kf_step(const GaussianBelief& b, const Example& ex, double dt, int substeps, const Vec& o,
                       EventLog* log) {
  if (!ex.linear()) throw std::invalid_argument("kf_step: model '" + ex.name + "' is not linear-Gaussian");
  const GaussianBelief pred = moment_predict(b, *ex.model, dt, substeps);
  const auto& obs = static_cast<const LinearObservation&>(*ex.observation);
  return linear_update(pred, obs.matrix(), o - obs.matrix() * pred.mean, obs.noise_cov(), log);
}

GaussianBelief ekf_step(const GaussianBelief& b, const Example& ex, double dt, int substeps, const Vec& o,
                        EventLog* log) {
  const GaussianBelief pred = moment_predict(b, *ex.model, dt, substeps);
  const Mat h = ex.observation->jacobian(pred.mean);
  const Vec innov = o - ex.observation->h(pred.mean);
  GaussianBelief out = linear_update(pred, h, innov, ex.observation->noise_cov(), log);
  if (Eigen::LLT<Mat>(out.cov).info() != Eigen::Success &&
      Eigen::SelfAdjointEigenSolver<Mat>(out.cov).eigenvalues().minCoeff() < -1e-10) {
    throw NumericalDivergence("ekf_step: covariance lost positive definiteness");
  }
  return out;
}

Mat enkf_step(const Mat& ensemble, const Example& ex, double dt, int substeps, const Vec& o, Rng& rng,
              EventLog* log) {
  const Eigen::Index m = ensemble.cols();
  if (m < 2) throw std::invalid_argument("enkf_step: need at least two members");
  Mat x = em_propagate(*ex.model, ensemble, dt / substeps, substeps, rng);
  if (!x.allFinite()) throw NumericalDivergence("enkf_step: non-finite forecast in '" + ex.name + "'");
  const Mat y = ex.observation->h(x) + ex.observation->sample_noise(rng, m);
  const Mat xc = x.colwise() - x.rowwise().mean();
  const Mat yc = y.colwise() - y.rowwise().mean();
  const Mat pxy = xc * yc.transpose() / double(m - 1);
  const Mat pyy = yc * yc.transpose() / double(m - 1);
  const auto llt = robust_cholesky(pyy, log, "enkf P^yy");
  const Mat gain = llt.solve(pxy.transpose()).transpose();
  x.noalias() += gain * ((-y).colwise() + o);
  return x;
}

ParticleCloud ParticleCloud::from(const InitialDistribution& d, Eigen::Index m, Rng& rng) {
  return {d.sample(rng, m), Vec::Constant(m, -std::log(double(m)))};
}

void pf_reweight(ParticleCloud& cloud, const ObservationModel& obs, const Vec& o) {
  const Vec ll = obs.log_likelihood(o, cloud.particles);
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const double v = cloud.log_weights[i] + ll[i];
    cloud.log_weights[i] = std::isfinite(v) ? v : -INFINITY;
  }
  const double lse = logsumexp(cloud.log_weights);
  if (!std::isfinite(lse)) throw WeightCollapse("particle filter: weight collapse");
  cloud.log_weights.array() -= lse;
}

std::vector<Eigen::Index> systematic_resample(const Vec& weights, Eigen::Index m, Rng& rng) {
  std::vector<Eigen::Index> idx(m);
  const double u0 = rng.uniform();
  if (weights.size() == m && weights.maxCoeff() == weights.minCoeff()) {
    // Exactly uniform weights give one copy each for any offset.
    std::iota(idx.begin(), idx.end(), Eigen::Index(0));
    return idx;
  }
  long double cum = 0.0L;
  Eigen::Index i = 0;
  const Eigen::Index n = weights.size();
  for (Eigen::Index j = 0; j < m; ++j) {
    const long double u = (u0 + j) / m;
    while (i < n - 1 && cum + weights[i] <= u) cum += weights[i++];
    idx[j] = i;
  }
  return idx;
}

std::vector<Eigen::Index> multinomial_resample(const Vec& weights, Eigen::Index m, Rng& rng) {
  std::vector<double> cdf(weights.size());
  std::partial_sum(weights.data(), weights.data() + weights.size(), cdf.begin());
  std::vector<Eigen::Index> idx(m);
  for (auto& k : idx) {
    const double u = rng.uniform() * cdf.back();
    k = std::min<Eigen::Index>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), weights.size() - 1);
  }
  return idx;
}

void resample(ParticleCloud& cloud, Rng& rng, Resampling scheme) {
  const Vec w = cloud.weights();
  const auto idx = scheme == Resampling::kSystematic ? systematic_resample(w, cloud.size(), rng)
                                                     : multinomial_resample(w, cloud.size(), rng);
  Mat next(cloud.particles.rows(), cloud.size());
  for (Eigen::Index j = 0; j < cloud.size(); ++j) next.col(j) = cloud.particles.col(idx[j]);
  cloud.particles = std::move(next);
  cloud.log_weights.setConstant(-std::log(double(cloud.size())));
}

ParticleCloud pf_step(const ParticleCloud& cloud, const Example& ex, double dt, int substeps, const Vec& o,
                      Rng& rng, ParticleCloud* weighted, Resampling scheme) {
  ParticleCloud next{em_propagate(*ex.model, cloud.particles, dt / substeps, substeps, rng), cloud.log_weights};
  pf_reweight(next, *ex.observation, o);
  if (weighted) *weighted = next;
  resample(next, rng, scheme);
  return next;
}

Moments cloud_moments(const ParticleCloud& cloud) {
  // Zero-weight particles may be non-finite; drop them before forming sums.
  const Vec w = cloud.weights();
  if ((w.array() > 0.0).all()) return weighted_moments(cloud.particles, w);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) keep.push_back(i);
  return weighted_moments(cloud.particles(Eigen::all, keep), w(keep));
}

Moments ensemble_moments(const Mat& ensemble) { return sample_moments(ensemble); }

}  // namespace dfw
