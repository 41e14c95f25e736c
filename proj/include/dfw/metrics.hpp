#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "dfw/diagnostics.hpp"
#include "dfw/linalg.hpp"
#include "dfw/rng.hpp"

namespace dfw {

/// -log(1e-200): cap on negative log-densities in NLL and KLD.
inline const double kLogDensityClip = 200.0 * std::log(10.0);

/// Mean Euclidean distance between matched columns.
double fme(const Mat& reference_means, const Mat& estimates);
double mae(const Mat& states, const Mat& estimates);
/// (mae_hat - mae_ref) / mae_ref as a fraction. Throws if mae_ref == 0.
double rmae(double mae_hat, double mae_ref);

/// min(-log p, clip) for one normalized log-density value.
inline double nll_term(double log_p) {
  const double v = -log_p;
  return std::isnan(v) || v > kLogDensityClip ? kLogDensityClip : v;
}
/// Mean of nll_term over normalized log-densities of the true states.
double nll(const Vec& log_p);

/// log p(z_j) - log p-hat(z_j) for z_j ~ p, with -log p-hat clipped as in NLL.
inline double kld_term(double log_p, double log_phat) {
  return log_p - std::max(log_phat, -kLogDensityClip);
}

struct McEstimate {
  double value = 0.0;
  double se = 0.0;
};

/// Nested Monte Carlo KLD(p || p-hat): m outer repetitions of j draws from
/// the reference. Both log-densities must be normalized.
using Sampler = std::function<Mat(Rng&, int)>;
McEstimate kld_mc(const Sampler& ref_sampler, const std::function<Vec(const Mat&)>& ref_logpdf,
                  const std::function<Vec(const Mat&)>& approx_logpdf, int j, int m, Rng& rng);

/// Gaussian KDE with full bandwidth matrix H = n^{-2/(d+4)} Sigma-hat
/// (Scott's rule). n is M for equal weights and the Kish effective sample
/// size (sum w)^2 / sum w^2 otherwise; Sigma-hat is the (reliability-)
/// weighted sample covariance.
class Kde {
 public:
  explicit Kde(Mat points, Vec weights = Vec(), EventLog* log = nullptr);

  int dim() const { return static_cast<int>(points_.rows()); }
  Eigen::Index size() const { return points_.cols(); }
  double effective_size() const { return n_eff_; }
  double scott_factor() const { return factor_; }
  const Mat& bandwidth() const { return bandwidth_; }
  const Vec& weights() const { return weights_; }

  Vec log_pdf(const Mat& x) const;
  /// Draws from the KDE mixture.
  Mat sample(Rng& rng, Eigen::Index n) const;
  /// Draws from the weighted point cloud (no kernel noise).
  Mat resample_points(Rng& rng, Eigen::Index n) const;

 private:
  Mat points_;
  Vec weights_;
  Vec log_weights_;
  double n_eff_;
  double factor_;
  Mat bandwidth_;
  Mat chol_;
  Mat white_points_;  // L^{-1} points
  Vec white_norm2_;
  double log_norm_;
};

/// Scott factor n^{-1/(d+4)}.
double scott_factor(double n, int d);

struct MetricRecord {
  std::string example;
  std::string method;
  std::uint64_t seed = 0;
  double t_k = 0.0;
  std::string metric;  // fme, mae, rmae, kld, nll
  double value = 0.0;
};

/// Header `example,method,seed,t_k,metric,value`, LF line endings, values
/// with 17 significant digits.
void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& records);
std::string format_metrics_csv(const std::vector<MetricRecord>& records);

}  // namespace dfw
