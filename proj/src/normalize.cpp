#include "dfw/normalize.hpp"

#include <string>

namespace dfw {

QuadResult quad_log_normalize(const LogDensityFn& logdensity, double l, double r, int points) {
  if (!(l < r) || points < 2) throw std::invalid_argument("quadrature: need l < r and I >= 2");
  const double h = (r - l) / points;
  Mat x(1, points);
  for (int i = 0; i < points; ++i) x(0, i) = l + (i + 0.5) * h;
  const Vec lp = logdensity(x);
  const double lse = logsumexp(lp);
  if (!std::isfinite(lse)) throw NumericalDivergence("quadrature: non-finite normalizing constant");
  QuadResult out;
  out.log_z = lse + std::log(h);
  Vec w = (lp.array() - lse).exp().matrix();
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (std::isnan(w[i])) w[i] = 0.0;
  const Vec xs = x.row(0).transpose();
  out.mean = w.dot(xs);
  out.var = w.dot((xs.array() - out.mean).square().matrix());
  return out;
}

double quad_normalize(const std::function<double(double)>& logdensity, double l, double r, int points) {
  const auto res = quad_log_normalize(
      [&](const Mat& x) {
        Vec v(x.cols());
        for (Eigen::Index i = 0; i < x.cols(); ++i) v[i] = logdensity(x(0, i));
        return v;
      },
      l, r, points);
  const double z = std::exp(res.log_z);
  if (!std::isfinite(z)) throw NumericalDivergence("quadrature: normalizing constant overflows");
  return z;
}

IsResult is_normalize(const LogDensityFn& logdensity, const Proposal& proposal, int samples, Rng& rng,
                      EventLog* log, double ess_floor) {
  if (samples < 1) throw std::invalid_argument("is_normalize: need at least one sample");
  Mat x;
  Vec lq;
  if (proposal.samples && proposal.samples->cols() >= samples) {
    x = proposal.samples->leftCols(samples);
    lq = proposal.log_q->head(samples);
  } else {
    x = proposal.q.sample(rng, samples);
    lq = proposal.q.log_pdf(x);
  }
  Vec lw = logdensity(x) - lq;
  for (Eigen::Index i = 0; i < lw.size(); ++i)
    if (std::isnan(lw[i])) lw[i] = -INFINITY;
  const double lse = logsumexp(lw);
  if (!std::isfinite(lse)) {
    record_event(log, "proposal_mismatch", "importance weights all zero");
    throw NumericalDivergence("is_normalize: proposal mismatch (all weights zero)");
  }
  IsResult out;
  out.log_z = lse - std::log(double(samples));
  const Vec w = (lw.array() - lse).exp().matrix();  // normalized
  out.ess = 1.0 / w.squaredNorm();
  out.mean = x * w;
  // sd of the raw ratios relative to their mean, from normalized weights
  const double z = std::exp(out.log_z);
  const double var_ratio = samples > 1 ? (double(samples) * w.squaredNorm() - 1.0) * samples / (samples - 1) : 0.0;
  out.z_se = z * std::sqrt(std::max(0.0, var_ratio) / samples);
  if (out.ess < ess_floor) {
    record_event(log, "low_ess", "importance ESS " + std::to_string(out.ess) + " below floor");
  }
  return out;
}

UnconditionalMoments::UnconditionalMoments(const Example& ex, const TimeGrid& grid, int paths, Rng rng) {
  Mat s = ex.prior.sample(rng, paths);
  moments_.push_back(sample_moments(s));
  for (int k = 1; k <= grid.observations; ++k) {
    s = em_propagate(*ex.model, std::move(s), grid.tau(), grid.substeps, rng);
    moments_.push_back(sample_moments(s));
  }
}

Proposal build_wide_proposal(const UnconditionalMoments& moments, int k, double inflation) {
  if (inflation < 1.0) throw std::invalid_argument("proposal inflation must be >= 1");
  const Moments& m = moments.at(k);
  return {ProposalKind::kWideGaussian, Gaussian(m.mean, inflation * m.cov), inflation, nullptr, nullptr};
}

WideProposalCache::WideProposalCache(std::shared_ptr<const UnconditionalMoments> moments, double inflation,
                                     int samples, std::uint64_t seed)
    : moments_(std::move(moments)), inflation_(inflation), samples_(samples), seed_(seed) {}

Proposal WideProposalCache::get(int k) {
  std::lock_guard lock(mutex_);
  auto it = cache_.find(k);
  if (it != cache_.end()) return it->second;
  Proposal p = build_wide_proposal(*moments_, k, inflation_);
  Rng rng = Rng(seed_).substream(Stream::kNormalization, std::uint64_t(k));
  auto x = std::make_shared<Mat>(p.q.sample(rng, samples_));
  p.log_q = std::make_shared<Vec>(p.q.log_pdf(*x));
  p.samples = std::move(x);
  return cache_.emplace(k, std::move(p)).first->second;
}

std::vector<GaussianBelief> ekf_run(const Example& ex, const Mat& obs_seq, const TimeGrid& grid, EventLog* log) {
  std::vector<GaussianBelief> out;
  GaussianBelief b = GaussianBelief::from(ex.prior);
  for (Eigen::Index k = 1; k <= obs_seq.cols(); ++k) {
    b = ekf_step(b, ex, grid.interval(), grid.substeps, obs_seq.col(k - 1), log);
    out.push_back(b);
  }
  return out;
}

Proposal build_ekf_proposal(const GaussianBelief& posterior, double inflation) {
  if (inflation < 1.0) throw std::invalid_argument("proposal inflation must be >= 1");
  Eigen::LLT<Mat> llt(posterior.cov);
  if (llt.info() != Eigen::Success || !posterior.cov.allFinite()) {
    throw NumericalDivergence("EKF covariance is not positive definite");
  }
  return {ProposalKind::kEkfBased, Gaussian(posterior.mean, inflation * posterior.cov), inflation, nullptr,
          nullptr};
}

Proposal build_ekf_proposal(const Example& ex, const Mat& obs_seq, const TimeGrid& grid, int k,
                            double inflation, WideProposalCache* fallback, EventLog* log) {
  try {
    const auto beliefs = ekf_run(ex, obs_seq.leftCols(k), grid, log);
    return build_ekf_proposal(beliefs.at(k - 1), inflation);
  } catch (const NumericalDivergence& e) {
    if (!fallback) throw;
    record_event(log, "proposal_fallback", std::string("EKF proposal replaced by wide Gaussian: ") + e.what());
    return fallback->get(k);
  }
}

std::pair<double, double> quad_domain(const Moments& unconditional) {
  const double m = unconditional.mean[0];
  const double s = std::sqrt(unconditional.cov(0, 0));
  return {m - 8.0 * s, m + 8.0 * s};
}

}  // namespace dfw

namespace dfw {

NormMethod norm_method_from_string(const std::string& s) {
  if (s == "quad") return NormMethod::kQuad;
  if (s == "i-ekf") return NormMethod::kIekf;
  if (s == "i-g") return NormMethod::kIg;
  throw std::invalid_argument("unknown normalization method '" + s + "'");
}

std::string to_string(NormMethod m) {
  switch (m) {
    case NormMethod::kQuad: return "quad";
    case NormMethod::kIekf: return "i-ekf";
    case NormMethod::kIg: return "i-g";
  }
  return "?";
}

Normalizer::Normalizer(const Example& ex, const TimeGrid& grid, Options opt, EventLog* log)
    : ex_(&ex), grid_(grid), opt_(opt), log_(log) {
  if (opt_.method == NormMethod::kQuad && ex.state_dim() != 1) {
    throw std::invalid_argument("quadrature normalization needs a one-dimensional state");
  }
  if (opt_.inflation <= 0.0) opt_.inflation = opt_.method == NormMethod::kIg ? 3.0 : 2.0;
  moments_ = std::make_shared<UnconditionalMoments>(
      ex, grid, opt_.moment_paths, Rng(opt_.seed).substream(Stream::kNormalization, 1u << 20));
  // The wide proposal doubles as the fallback for a diverging EKF.
  const double wide_inflation = opt_.method == NormMethod::kIg ? opt_.inflation : 3.0;
  wide_ = std::make_unique<WideProposalCache>(moments_, wide_inflation, opt_.samples, opt_.seed);
}

DensityEstimate Normalizer::estimate(const LogDensityFn& logdensity, int k, const Mat& obs_seq, Rng& rng) const {
  DensityEstimate out;
  if (opt_.method == NormMethod::kQuad) {
    const auto [l, r] = quad_domain(moments_->at(k));
    const QuadResult q = quad_log_normalize(logdensity, l, r, opt_.samples);
    out.log_z = q.log_z;
    out.mean = Vec::Constant(1, q.mean);
    out.ess = opt_.samples;
    return out;
  }
  const Proposal p = opt_.method == NormMethod::kIekf
                         ? build_ekf_proposal(*ex_, obs_seq, grid_, k, opt_.inflation, wide_.get(), log_)
                         : wide_->get(k);
  const IsResult r = is_normalize(logdensity, p, opt_.samples, rng, log_);
  out.log_z = r.log_z;
  out.z_se = r.z_se;
  out.ess = r.ess;
  out.mean = r.mean;
  return out;
}

}  // namespace dfw
