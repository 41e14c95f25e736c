#include "dfw/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

namespace dfw {

double fme(const Mat& reference_means, const Mat& estimates) {
  if (reference_means.rows() != estimates.rows() || reference_means.cols() != estimates.cols() ||
      estimates.cols() < 1) {
    throw std::invalid_argument("fme: shape mismatch");
  }
  // stableNorm: a diverging but finite estimate must not overflow to inf
  const Mat diff = reference_means - estimates;
  double s = 0.0;
  for (Eigen::Index j = 0; j < diff.cols(); ++j) s += diff.col(j).stableNorm();
  return s / double(diff.cols());
}

double mae(const Mat& states, const Mat& estimates) { return fme(states, estimates); }

double rmae(double mae_hat, double mae_ref) {
  if (mae_ref == 0.0) throw std::invalid_argument("rmae: reference MAE is zero");
  return (mae_hat - mae_ref) / mae_ref;
}

double nll(const Vec& log_p) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < log_p.size(); ++i) s += nll_term(log_p[i]);
  return s / double(log_p.size());
}

McEstimate kld_mc(const Sampler& ref_sampler, const std::function<Vec(const Mat&)>& ref_logpdf,
                  const std::function<Vec(const Mat&)>& approx_logpdf, int j, int m, Rng& rng) {
  Vec outer(m);
  for (int i = 0; i < m; ++i) {
    const Mat z = ref_sampler(rng, j);
    const Vec lp = ref_logpdf(z);
    const Vec lq = approx_logpdf(z);
    double s = 0.0;
    for (int r = 0; r < j; ++r) s += kld_term(lp[r], lq[r]);
    outer[i] = s / j;
  }
  McEstimate out;
  out.value = outer.mean();
  out.se = m > 1 ? std::sqrt((outer.array() - out.value).square().sum() / (m - 1) / m) : 0.0;
  return out;
}

double scott_factor(double n, int d) { return std::pow(n, -1.0 / (d + 4)); }

Kde::Kde(Mat points, Vec weights, EventLog* log) : points_(std::move(points)) {
  const Eigen::Index m = points_.cols();
  const int d = dim();
  if (m < 2) throw std::invalid_argument("Kde: need at least two points");
  if (weights.size() == 0) {
    weights_ = Vec::Constant(m, 1.0 / double(m));
  } else {
    if (weights.size() != m || (weights.array() < 0.0).any() || !(weights.sum() > 0.0)) {
      throw std::invalid_argument("Kde: invalid weights");
    }
    weights_ = weights / weights.sum();
  }
  log_weights_ = weights_.array().log().matrix();
  n_eff_ = 1.0 / weights_.squaredNorm();
  factor_ = dfw::scott_factor(n_eff_, d);
  const Moments mom = weighted_moments(points_, weights_);
  Mat cov = mom.cov;
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success || cov.trace() <= 0.0) {
    const double tr = cov.trace();
    const double jitter = 1e-9 * (tr > 0.0 ? tr / d : 1.0);
    cov.diagonal().array() += jitter;
    record_event(log, "jitter", "kde: singular sample covariance, added " + std::to_string(jitter));
  }
  bandwidth_ = factor_ * factor_ * cov;
  chol_ = robust_cholesky(bandwidth_, log, "kde bandwidth").matrixL();
  white_points_ = chol_.triangularView<Eigen::Lower>().solve(points_);
  white_norm2_ = white_points_.colwise().squaredNorm().transpose();
  log_norm_ = -0.5 * d * kLog2Pi - chol_.diagonal().array().log().sum();
}

Vec Kde::log_pdf(const Mat& x) const {
  const Mat wx = chol_.triangularView<Eigen::Lower>().solve(x);
  const Vec xn = wx.colwise().squaredNorm().transpose();
  Vec out(x.cols());
  constexpr Eigen::Index kChunk = 256;
  for (Eigen::Index c0 = 0; c0 < x.cols(); c0 += kChunk) {
    const Eigen::Index nc = std::min(kChunk, x.cols() - c0);
    // -0.5 |p - x|^2 = p.x - 0.5|p|^2 - 0.5|x|^2, one column per query
    Mat e = white_points_.transpose() * wx.middleCols(c0, nc);
    e.colwise() += log_weights_ - 0.5 * white_norm2_;
    for (Eigen::Index q = 0; q < nc; ++q) {
      out[c0 + q] = logsumexp(e.col(q)) - 0.5 * xn[c0 + q] + log_norm_;
    }
  }
  return out;
}

Mat Kde::resample_points(Rng& rng, Eigen::Index n) const {
  std::vector<double> cdf(weights_.size());
  std::partial_sum(weights_.data(), weights_.data() + weights_.size(), cdf.begin());
  Mat out(dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = rng.uniform() * cdf.back();
    const auto k = std::min<Eigen::Index>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), size() - 1);
    out.col(i) = points_.col(k);
  }
  return out;
}

Mat Kde::sample(Rng& rng, Eigen::Index n) const {
  Mat out = resample_points(rng, n);
  out += chol_.triangularView<Eigen::Lower>() * rng.normal_matrix(dim(), n);
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& records) {
  out << "example,method,seed,t_k,metric,value\n";
  char buf[64];
  for (const auto& r : records) {
    out << r.example << ',' << r.method << ',' << r.seed << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.t_k);
    out << buf << ',' << r.metric << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    out << buf << '\n';
  }
}

std::string format_metrics_csv(const std::vector<MetricRecord>& records) {
  std::ostringstream s;
  write_metrics_csv(s, records);
  return s.str();
}

}  // namespace dfw
