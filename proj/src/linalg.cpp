#include "dfw/linalg.hpp"

#include <string>

namespace dfw {

Eigen::LLT<Mat> robust_cholesky(const Mat& s, EventLog* log, const char* where) {
  Eigen::LLT<Mat> llt(s);
  if (llt.info() == Eigen::Success) return llt;
  const double scale = std::max(1.0, s.diagonal().cwiseAbs().mean());
  for (double jitter = 1e-10; jitter <= 1e-6 * 1.0001; jitter *= 10.0) {
    Mat t = s;
    t.diagonal().array() += jitter * scale;
    llt.compute(t);
    record_event(log, "jitter", std::string(where) + ": added " + std::to_string(jitter * scale));
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericalDivergence(std::string(where) + ": matrix not positive definite after jitter");
}

Moments sample_moments(const Mat& points) {
  const Eigen::Index m = points.cols();
  Moments out;
  out.mean = points.rowwise().mean();
  const Mat centered = points.colwise() - out.mean;
  out.cov = m > 1 ? Mat(centered * centered.transpose() / double(m - 1))
                  : Mat::Zero(points.rows(), points.rows());
  return out;
}

Moments weighted_moments(const Mat& points, const Vec& weights) {
  const Vec w = weights / weights.sum();
  Moments out;
  out.mean = points * w;
  const Mat centered = points.colwise() - out.mean;
  const double denom = 1.0 - w.squaredNorm();
  if (denom <= 1e-300) {
    out.cov = Mat::Zero(points.rows(), points.rows());
  } else {
    out.cov = centered * w.asDiagonal() * centered.transpose() / denom;
  }
  return out;
}

Gaussian::Gaussian(Vec mean, Mat cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  if (cov_.isZero(0.0)) {
    // Point mass: sampling returns the mean exactly.
    chol_ = Mat::Zero(cov_.rows(), cov_.cols());
    log_det_ = -INFINITY;
    return;
  }
  auto llt = robust_cholesky(cov_, nullptr, "gaussian");
  chol_ = llt.matrixL();
  log_det_ = 2.0 * chol_.diagonal().array().log().sum();
}

Vec Gaussian::log_pdf(const Mat& x) const {
  Mat z = x.colwise() - mean_;
  chol_.triangularView<Eigen::Lower>().solveInPlace(z);
  const double c = -0.5 * (dim() * kLog2Pi + log_det_);
  return (c - 0.5 * z.colwise().squaredNorm().array()).matrix().transpose();
}

Mat Gaussian::grad_log_pdf(const Mat& x) const {
  Mat z = x.colwise() - mean_;
  chol_.triangularView<Eigen::Lower>().solveInPlace(z);
  chol_.transpose().triangularView<Eigen::Upper>().solveInPlace(z);
  return -z;
}

Mat Gaussian::sample(Rng& rng, Eigen::Index n) const {
  Mat z = rng.normal_matrix(dim(), n);
  return (chol_.triangularView<Eigen::Lower>() * z).colwise() + mean_;
}

}  // namespace dfw
