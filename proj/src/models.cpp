#include "dfw/models.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dfw {

// ---------------------------------------------------------------------------
// SdeModel defaults

Mat SdeModel::grad_div_a(const Mat& x) const { return Mat::Zero(state_dim(), x.cols()); }

Vec SdeModel::lap_a(const Mat& x) const { return Vec::Zero(x.cols()); }

Mat SdeModel::cov_times(const Mat& x, const Mat& w) const {
  Mat out(w.rows(), w.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    const Mat s = diffusion(x.col(b));
    out.col(b) = s * (s.transpose() * w.col(b));
  }
  return out;
}

Vec SdeModel::sigma_t_norm2(const Mat& x, const Mat& w) const {
  Vec out(x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    out(b) = (diffusion(x.col(b)).transpose() * w.col(b)).squaredNorm();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Additive noise

AdditiveNoiseSde::AdditiveNoiseSde(Mat sigma) : sigma_(std::move(sigma)) {
  a_ = sigma_ * sigma_.transpose();
}

Mat AdditiveNoiseSde::diffuse(const Mat&, const Mat& dw) const { return sigma_ * dw; }

Mat AdditiveNoiseSde::diffusion(const Vec&) const { return sigma_; }

Mat AdditiveNoiseSde::cov_times(const Mat&, const Mat& w) const { return a_ * w; }

Vec AdditiveNoiseSde::sigma_t_norm2(const Mat&, const Mat& w) const {
  return (sigma_.transpose() * w).colwise().squaredNorm().transpose();
}

LinearSde::LinearSde(std::string name, Mat a, Mat sigma)
    : AdditiveNoiseSde(std::move(sigma)), name_(std::move(name)), a_mat_(std::move(a)) {}

Vec LinearSde::div_drift(const Mat& x) const { return Vec::Constant(x.cols(), a_mat_.trace()); }

// ---------------------------------------------------------------------------
// Bistable

BistableSde::BistableSde(double drift_sign) : AdditiveNoiseSde(Mat::Identity(1, 1)), sign_(drift_sign) {
  if (drift_sign != 1.0 && drift_sign != -1.0) throw std::invalid_argument("bistable drift_sign must be +1 or -1");
}

Mat BistableSde::drift(const Mat& x) const {
  return (-0.4 * sign_ * (5.0 * x.array() - x.array().cube())).matrix();
}

Mat BistableSde::drift_jacobian(const Vec& x) const {
  return Mat::Constant(1, 1, sign_ * (-2.0 + 1.2 * x(0) * x(0)));
}

Vec BistableSde::div_drift(const Mat& x) const {
  return (sign_ * (-2.0 + 1.2 * x.row(0).array().square())).matrix().transpose();
}

// ---------------------------------------------------------------------------
// Schlogl

SchloglSde::SchloglSde(double b4_sign) : b4_sign_(b4_sign) {
  if (b4_sign != 1.0 && b4_sign != -1.0) {
    throw std::invalid_argument("schlogl_b4_sign must be +1 or -1");
  }
}

double SchloglSde::raw_rate(int i, double x) const {
  switch (i) {
    case 1: return 0.5 * kTheta[0] * kA * x * (x - 1.0);
    case 2: return kTheta[1] / 6.0 * x * (x - 1.0) * (x - 2.0);
    case 3: return kTheta[2] * kB;
    case 4: return kTheta[3] * x;
    default: throw std::out_of_range("schlogl channel");
  }
}

SchloglSde::Rates SchloglSde::rates(double x) const {
  const double c1 = 0.5 * kTheta[0] * kA;
  const double c2 = kTheta[1] / 6.0;
  Rates r{};
  r.b[0] = c1 * x * (x - 1.0);
  r.db[0] = c1 * (2.0 * x - 1.0);
  r.d2b[0] = 2.0 * c1;
  r.b[1] = c2 * x * (x - 1.0) * (x - 2.0);
  r.db[1] = c2 * (3.0 * x * x - 6.0 * x + 2.0);
  r.d2b[1] = c2 * (6.0 * x - 6.0);
  r.b[2] = kTheta[2] * kB;
  r.db[2] = 0.0;
  r.d2b[2] = 0.0;
  r.b[3] = kTheta[3] * x;
  r.db[3] = kTheta[3];
  r.d2b[3] = 0.0;
  r.clamped = false;
  for (int i = 0; i < 4; ++i) {
    if (r.b[i] < 0.0) {
      r.b[i] = r.db[i] = r.d2b[i] = 0.0;
      r.clamped = true;
    }
  }
  if (r.clamped) warnings_.fetch_add(1, std::memory_order_relaxed);
  return r;
}

Mat SchloglSde::drift(const Mat& x) const {
  Mat out(1, x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    const Rates r = rates(x(0, b));
    out(0, b) = r.b[0] - r.b[1] + r.b[2] + b4_sign_ * r.b[3];
  }
  return out;
}

Mat SchloglSde::diffuse(const Mat& x, const Mat& dw) const {
  Mat out(1, x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    const Rates r = rates(x(0, b));
    out(0, b) = std::sqrt(r.b[0] + r.b[1] + r.b[2] + r.b[3]) * dw(0, b);
  }
  return out;
}

Mat SchloglSde::diffusion(const Vec& x) const {
  const Rates r = rates(x(0));
  return Mat::Constant(1, 1, std::sqrt(r.b[0] + r.b[1] + r.b[2] + r.b[3]));
}

Mat SchloglSde::drift_jacobian(const Vec& x) const {
  const Rates r = rates(x(0));
  return Mat::Constant(1, 1, r.db[0] - r.db[1] + r.db[2] + b4_sign_ * r.db[3]);
}

Vec SchloglSde::div_drift(const Mat& x) const {
  Vec out(x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) out(b) = drift_jacobian(x.col(b))(0, 0);
  return out;
}

Mat SchloglSde::grad_div_a(const Mat& x) const {
  Mat out(1, x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    const Rates r = rates(x(0, b));
    out(0, b) = r.db[0] + r.db[1] + r.db[2] + r.db[3];
  }
  return out;
}

Vec SchloglSde::lap_a(const Mat& x) const {
  Vec out(x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    const Rates r = rates(x(0, b));
    out(b) = r.d2b[0] + r.d2b[1] + r.d2b[2] + r.d2b[3];
  }
  return out;
}

Mat SchloglSde::cov_times(const Mat& x, const Mat& w) const {
  Mat out(1, x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    const Rates r = rates(x(0, b));
    out(0, b) = (r.b[0] + r.b[1] + r.b[2] + r.b[3]) * w(0, b);
  }
  return out;
}

Vec SchloglSde::sigma_t_norm2(const Mat& x, const Mat& w) const {
  return (cov_times(x, w).array() * w.array()).matrix().transpose();
}

// ---------------------------------------------------------------------------
// Lorenz-96

Lorenz96Sde::Lorenz96Sde(int d, double forcing, double sigma)
    : AdditiveNoiseSde(sigma * Mat::Identity(d, d)), d_(d), forcing_(forcing) {
  if (d < 4) throw std::invalid_argument("Lorenz-96 requires d >= 4");
}

Mat Lorenz96Sde::drift(const Mat& x) const {
  Mat out(d_, x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    for (int i = 0; i < d_; ++i) {
      const double xp1 = x((i + 1) % d_, b);
      const double xm1 = x((i + d_ - 1) % d_, b);
      const double xm2 = x((i + d_ - 2) % d_, b);
      out(i, b) = (xp1 - xm2) * xm1 - x(i, b) + forcing_;
    }
  }
  return out;
}

Mat Lorenz96Sde::drift_jacobian(const Vec& x) const {
  Mat j = Mat::Zero(d_, d_);
  for (int i = 0; i < d_; ++i) {
    const int ip1 = (i + 1) % d_;
    const int im1 = (i + d_ - 1) % d_;
    const int im2 = (i + d_ - 2) % d_;
    j(i, ip1) += x(im1);
    j(i, im2) -= x(im1);
    j(i, im1) += x(ip1) - x(im2);
    j(i, i) -= 1.0;
  }
  return j;
}

Vec Lorenz96Sde::div_drift(const Mat& x) const { return Vec::Constant(x.cols(), -double(d_)); }

// ---------------------------------------------------------------------------
// Generic (finite differences)

GenericSde::GenericSde(std::string name, int d, int m, DriftFn drift, DiffusionFn diffusion,
                       double fd_step)
    : name_(std::move(name)),
      d_(d),
      m_(m),
      drift_fn_(std::move(drift)),
      diffusion_fn_(std::move(diffusion)),
      h_(fd_step) {}

Mat GenericSde::drift(const Mat& x) const {
  Mat out(d_, x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) out.col(b) = drift_fn_(x.col(b));
  return out;
}

Mat GenericSde::diffuse(const Mat& x, const Mat& dw) const {
  Mat out(d_, x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) out.col(b) = diffusion_fn_(x.col(b)) * dw.col(b);
  return out;
}

Mat GenericSde::drift_jacobian(const Vec& x) const {
  Mat j(d_, d_);
  for (int c = 0; c < d_; ++c) {
    Vec xp = x, xm = x;
    xp(c) += h_;
    xm(c) -= h_;
    j.col(c) = (drift_fn_(xp) - drift_fn_(xm)) / (2.0 * h_);
  }
  return j;
}

Vec GenericSde::div_drift(const Mat& x) const {
  Vec out(x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) out(b) = drift_jacobian(x.col(b)).trace();
  return out;
}

Mat GenericSde::a_at(const Vec& x) const {
  const Mat s = diffusion_fn_(x);
  return s * s.transpose();
}

Mat GenericSde::grad_div_a(const Mat& x) const {
  Mat out = Mat::Zero(d_, x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    for (int i = 0; i < d_; ++i) {
      Vec xp = x.col(b), xm = x.col(b);
      xp(i) += h_;
      xm(i) -= h_;
      // row i of d a / d x_i, summed over i
      out.col(b) += ((a_at(xp).row(i) - a_at(xm).row(i)) / (2.0 * h_)).transpose();
    }
  }
  return out;
}

Vec GenericSde::lap_a(const Mat& x) const {
  Vec out = Vec::Zero(x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    const Vec x0 = x.col(b);
    double s = 0.0;
    for (int i = 0; i < d_; ++i) {
      for (int j = 0; j < d_; ++j) {
        auto at = [&](double di, double dj) {
          Vec y = x0;
          y(i) += di;
          y(j) += dj;
          return a_at(y)(i, j);
        };
        s += (at(h_, h_) - at(h_, -h_) - at(-h_, h_) + at(-h_, -h_)) / (4.0 * h_ * h_);
      }
    }
    out(b) = s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Observations

ObservationModel::ObservationModel(int state_dim, Mat noise_cov)
    : state_dim_(state_dim), noise_cov_(std::move(noise_cov)) {
  Eigen::LLT<Mat> llt(noise_cov_);
  if (llt.info() != Eigen::Success || !noise_cov_.isApprox(noise_cov_.transpose())) {
    throw std::invalid_argument("observation noise covariance must be symmetric positive definite");
  }
  noise_chol_ = llt.matrixL();
  log_det_ = 2.0 * noise_chol_.diagonal().array().log().sum();
}

Mat ObservationModel::whiten(Mat residual) const {
  noise_chol_.triangularView<Eigen::Lower>().solveInPlace(residual);
  return residual;
}

Mat ObservationModel::residual(const Mat& o, const Mat& x) const {
  Mat r = -h(x);
  if (o.cols() == 1) {
    r.colwise() += o.col(0);
  } else if (o.cols() == x.cols()) {
    r += o;
  } else {
    throw std::invalid_argument("observation batch does not match state batch");
  }
  return r;
}

Vec ObservationModel::log_likelihood(const Mat& o, const Mat& x) const {
  Mat r = residual(o, x);
  r = whiten(std::move(r));
  const double c = -0.5 * (obs_dim() * kLog2Pi + log_det_);
  return (c - 0.5 * r.colwise().squaredNorm().array()).matrix().transpose();
}

Mat ObservationModel::grad_log_likelihood(const Mat& o, const Mat& x) const {
  Mat r = residual(o, x);
  // R^{-1} r
  noise_chol_.triangularView<Eigen::Lower>().solveInPlace(r);
  noise_chol_.transpose().triangularView<Eigen::Upper>().solveInPlace(r);
  Mat out(state_dim_, x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    out.col(b) = jacobian(x.col(b)).transpose() * r.col(b);
  }
  return out;
}

Mat ObservationModel::sample_noise(Rng& rng, Eigen::Index n) const {
  return noise_chol_ * rng.normal_matrix(obs_dim(), n);
}

LinearObservation::LinearObservation(Mat h_matrix, Mat noise_cov)
    : ObservationModel(static_cast<int>(h_matrix.cols()), std::move(noise_cov)),
      h_(std::move(h_matrix)) {
  if (h_.rows() != noise_cov_.rows()) throw std::invalid_argument("H and R dimensions differ");
  ht_rinv_ = noise_cov_.llt().solve(h_).transpose();
}

Mat LinearObservation::grad_log_likelihood(const Mat& o, const Mat& x) const {
  return ht_rinv_ * residual(o, x);
}

Log1pObservation::Log1pObservation(double noise_var)
    : ObservationModel(1, Mat::Constant(1, 1, noise_var)) {}

Mat Log1pObservation::h(const Mat& x) const { return x.array().max(0.0).log1p().matrix(); }

Mat Log1pObservation::jacobian(const Vec& x) const {
  return Mat::Constant(1, 1, x(0) > 0.0 ? 1.0 / (1.0 + x(0)) : 0.0);
}

double log_likelihood(const ObservationModel& obs, const Vec& o, const Vec& x) {
  return obs.log_likelihood(o, x)(0);
}

// ---------------------------------------------------------------------------
// Initial distributions

InitialDistribution::InitialDistribution(std::vector<double> weights,
                                         std::vector<Gaussian> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  if (weights_.empty() || weights_.size() != components_.size()) {
    throw std::invalid_argument("mixture needs one weight per component");
  }
  const double total = std::accumulate(weights_.begin(), weights_.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture weights must sum to 1");
}

InitialDistribution InitialDistribution::normal(Vec mean, Mat cov) {
  return InitialDistribution({1.0}, {Gaussian(std::move(mean), std::move(cov))});
}

Mat InitialDistribution::sample(Rng& rng, Eigen::Index n) const {
  if (components_.size() == 1) return components_[0].sample(rng, n);
  Mat out(dim(), n);
  for (Eigen::Index b = 0; b < n; ++b) {
    double u = rng.uniform();
    std::size_t c = 0;
    while (c + 1 < weights_.size() && u >= weights_[c]) {
      u -= weights_[c];
      ++c;
    }
    out.col(b) = components_[c].sample(rng, 1);
  }
  return out;
}

Vec InitialDistribution::log_density(const Mat& x) const {
  if (components_.size() == 1) return components_[0].log_pdf(x);
  Mat terms(components_.size(), x.cols());
  for (std::size_t c = 0; c < components_.size(); ++c) {
    terms.row(c) = (std::log(weights_[c]) + components_[c].log_pdf(x).array()).matrix().transpose();
  }
  Vec out(x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) out(b) = logsumexp(terms.col(b));
  return out;
}

Mat InitialDistribution::grad_log_density(const Mat& x) const {
  if (components_.size() == 1) return components_[0].grad_log_pdf(x);
  // Responsibility-weighted component scores.
  const Vec total = log_density(x);
  Mat out = Mat::Zero(dim(), x.cols());
  for (std::size_t c = 0; c < components_.size(); ++c) {
    const Vec logr = (std::log(weights_[c]) + components_[c].log_pdf(x).array()) - total.array();
    out += components_[c].grad_log_pdf(x) * logr.array().exp().matrix().asDiagonal();
  }
  return out;
}

Vec InitialDistribution::mean() const {
  Vec m = Vec::Zero(dim());
  for (std::size_t c = 0; c < components_.size(); ++c) m += weights_[c] * components_[c].mean();
  return m;
}

Mat InitialDistribution::covariance() const {
  const Vec m = mean();
  Mat p = Mat::Zero(dim(), dim());
  for (std::size_t c = 0; c < components_.size(); ++c) {
    const Vec dm = components_[c].mean() - m;
    p += weights_[c] * (components_[c].cov() + dm * dm.transpose());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Model zoo

Example ou_model(int d) {
  if (d < 1) throw std::invalid_argument("ou_model: d >= 1");
  Example ex;
  ex.name = "ou";
  ex.model = std::make_shared<LinearSde>("ou", -Mat::Identity(d, d), Mat::Identity(d, d));
  ex.observation = std::make_shared<LinearObservation>(Mat::Identity(d, d), Mat::Identity(d, d));
  ex.prior = InitialDistribution::normal(Vec::Zero(d), Mat::Identity(d, d));
  ex.aux_init = ex.prior;
  ex.spec = {{"name", "ou"}, {"d", d}};
  return ex;
}

Example bistable_model(double drift_sign) {
  Example ex;
  ex.name = "bistable";
  ex.model = std::make_shared<BistableSde>(drift_sign);
  ex.observation = std::make_shared<LinearObservation>(Mat::Identity(1, 1), Mat::Identity(1, 1));
  ex.prior = InitialDistribution::normal(Vec::Zero(1), Mat::Identity(1, 1));
  ex.aux_init = ex.prior;
  ex.spec = {{"name", "bistable"}};
  if (drift_sign != 1.0) ex.spec["drift_sign"] = drift_sign;
  return ex;
}

SpringMassParams SpringMassParams::sample(int r, std::uint64_t seed) {
  if (r < 1) throw std::invalid_argument("spring_mass_model: r >= 1");
  Rng rng = Rng(seed).substream(Stream::kModel);
  SpringMassParams p;
  p.seed = seed;
  for (int i = 0; i < r; ++i) p.mass.push_back(0.8 + 0.4 * rng.uniform());
  for (int i = 0; i <= r; ++i) p.stiffness.push_back(0.8 + 0.4 * rng.uniform());
  for (int i = 0; i <= r; ++i) p.damping.push_back(0.15 + 0.1 * rng.uniform());
  return p;
}

nlohmann::json SpringMassParams::to_json() const {
  return {{"seed", seed}, {"m", mass}, {"k", stiffness}, {"c", damping}};
}

SpringMassParams SpringMassParams::from_json(const nlohmann::json& j) {
  SpringMassParams p;
  p.seed = j.value("seed", std::uint64_t{0});
  p.mass = j.at("m").get<std::vector<double>>();
  p.stiffness = j.at("k").get<std::vector<double>>();
  p.damping = j.at("c").get<std::vector<double>>();
  if (p.stiffness.size() != p.mass.size() + 1 || p.damping.size() != p.mass.size() + 1) {
    throw std::invalid_argument("spring-mass parameters: need r masses and r+1 springs/dampers");
  }
  return p;
}

Mat spring_mass_matrix(const SpringMassParams& p) {
  const int r = static_cast<int>(p.mass.size());
  Mat a = Mat::Zero(2 * r, 2 * r);
  a.topRightCorner(r, r).setIdentity();
  auto a21 = a.bottomLeftCorner(r, r);
  auto a22 = a.bottomRightCorner(r, r);
  const auto& m = p.mass;
  const auto& k = p.stiffness;
  const auto& c = p.damping;
  for (int i = 0; i < r; ++i) {
    a21(i, i) = -(k[i] + k[i + 1]) / m[i];
    a22(i, i) = -(c[i] + c[i + 1]) / m[i];
    if (i + 1 < r) {
      a21(i, i + 1) = k[i + 1] / m[i];
      a21(i + 1, i) = k[i + 1] / m[i + 1];
    }
  }
  return a;
}

Example spring_mass_model(const SpringMassParams& params) {
  const int r = static_cast<int>(params.mass.size());
  const int d = 2 * r;
  Example ex;
  ex.name = "lsm";
  ex.model = std::make_shared<LinearSde>("lsm", spring_mass_matrix(params), Mat::Identity(d, d));
  Mat h = Mat::Zero(r, d);
  h.leftCols(r).setIdentity();
  ex.observation = std::make_shared<LinearObservation>(h, Mat::Identity(r, r));
  ex.prior = InitialDistribution::normal(Vec::Zero(d), Mat::Identity(d, d));
  ex.aux_init = ex.prior;
  ex.spec = {{"name", "lsm"}, {"r", r}, {"params", params.to_json()}};
  return ex;
}

Example spring_mass_model(int r, std::uint64_t seed) {
  return spring_mass_model(SpringMassParams::sample(r, seed));
}

Example schlogl_model(double b4_sign) {
  Example ex;
  ex.name = "schlogl";
  ex.model = std::make_shared<SchloglSde>(b4_sign);
  ex.observation = std::make_shared<Log1pObservation>(0.5);
  auto mixture = [](double m1, double s1, double m2, double s2) {
    return InitialDistribution({0.5, 0.5}, {Gaussian(Vec::Constant(1, m1), Mat::Constant(1, 1, s1 * s1)),
                                            Gaussian(Vec::Constant(1, m2), Mat::Constant(1, 1, s2 * s2))});
  };
  ex.prior = mixture(150.0, 10.0, 350.0, 10.0);
  ex.aux_init = mixture(150.0, 25.0, 375.0, 60.0);
  ex.spec = {{"name", "schlogl"}, {"b4_sign", b4_sign}};
  return ex;
}

int lorenz96_stride(int d, int d_prime) {
  if (d_prime < 1 || d % d_prime != 0) {
    throw std::invalid_argument("Lorenz-96: d / d' must be integral");
  }
  return d / d_prime;
}

Example lorenz96_model(int d, int d_prime, double forcing, double sigma) {
  const int stride = lorenz96_stride(d, d_prime);
  Example ex;
  ex.name = "l96";
  ex.model = std::make_shared<Lorenz96Sde>(d, forcing, sigma);
  Mat h = Mat::Zero(d_prime, d);
  for (int i = 1; i <= d_prime; ++i) h(i - 1, stride * i - 1) = 1.0;
  ex.observation = std::make_shared<LinearObservation>(h, 2.0 * Mat::Identity(d_prime, d_prime));
  ex.prior = InitialDistribution::normal(Vec::Constant(d, forcing), Mat::Identity(d, d));
  ex.aux_init = ex.prior;
  ex.spec = {{"name", "l96"}, {"d", d}, {"d_obs", d_prime}, {"F", forcing}, {"sigma", sigma}};
  return ex;
}

Example make_example(const nlohmann::json& spec) {
  const std::string name = spec.at("name").get<std::string>();
  if (name == "ou") return ou_model(spec.value("d", 1));
  if (name == "bistable") return bistable_model(spec.value("drift_sign", 1.0));
  if (name == "lsm") {
    if (spec.contains("params")) return spring_mass_model(SpringMassParams::from_json(spec["params"]));
    return spring_mass_model(spec.value("r", 5), spec.value("model_seed", std::uint64_t{2024}));
  }
  if (name == "schlogl") return schlogl_model(spec.value("b4_sign", 1.0));
  if (name == "l96") {
    const int d = spec.value("d", 4);
    return lorenz96_model(d, spec.value("d_obs", d), spec.value("F", 8.0), spec.value("sigma", 1.0));
  }
  throw std::invalid_argument("unknown example '" + name + "'");
}

}  // namespace dfw
