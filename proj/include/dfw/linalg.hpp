#pragma once

#include <cmath>
#include <numbers>

#include "dfw/diagnostics.hpp"
#include "dfw/rng.hpp"
#include "dfw/types.hpp"

namespace dfw {

inline constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

/// log(sum(exp(v))) with max shift. Returns -inf when every entry is -inf;
/// NaN entries are skipped.
template <typename Derived>
double logsumexp(const Eigen::DenseBase<Derived>& v) {
  double m = -INFINITY;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double x = v.derived().coeff(i);
    if (x > m) m = x;
  }
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double x = v.derived().coeff(i);
    if (!std::isnan(x)) s += std::exp(x - m);
  }
  return m + std::log(s);
}

template <typename Derived>
void symmetrize(Eigen::MatrixBase<Derived>& p) {
  p = (0.5 * (p + p.transpose())).eval();
}

/// Cholesky factor of a symmetric matrix. On failure a diagonal jitter
/// starting at 1e-10 and growing by 10x up to 1e-6 (relative to the mean
/// diagonal) is added; each escalation is recorded. Throws
/// NumericalDivergence if even the largest jitter fails.
Eigen::LLT<Mat> robust_cholesky(const Mat& s, EventLog* log = nullptr, const char* where = "cholesky");

/// Unweighted sample mean and covariance with 1/(M-1) normalization.
struct Moments {
  Vec mean;
  Mat cov;
};
Moments sample_moments(const Mat& points);

/// Weighted moments. Weights need not be normalized. The covariance uses the
/// reliability-weight correction 1/(1 - sum w_i^2) (w normalized), which
/// reduces to 1/(M-1) for uniform weights; it is zero when a single particle
/// carries all the mass.
Moments weighted_moments(const Mat& points, const Vec& weights);

/// Multivariate normal with cached Cholesky factor.
class Gaussian {
 public:
  Gaussian() = default;
  Gaussian(Vec mean, Mat cov);

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vec& mean() const { return mean_; }
  const Mat& cov() const { return cov_; }
  const Mat& chol() const { return chol_; }

  /// log N(x_b | mean, cov) per column.
  Vec log_pdf(const Mat& x) const;
  /// grad_x log N(x_b | mean, cov) per column.
  Mat grad_log_pdf(const Mat& x) const;
  Mat sample(Rng& rng, Eigen::Index n) const;
  double log_det() const { return log_det_; }

 private:
  Vec mean_;
  Mat cov_;
  Mat chol_;  // lower
  double log_det_ = 0.0;
};

}  // namespace dfw
