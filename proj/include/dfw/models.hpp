#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dfw/linalg.hpp"
#include "dfw/types.hpp"

namespace dfw {

/// dS = mu(S) dt + sigma(S) dB with the coefficient derivatives that enter
/// the Fokker-Planck correction term f. All batch methods take one state per
/// column. Implementations are immutable after construction.
class SdeModel {
 public:
  virtual ~SdeModel() = default;

  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int noise_dim() const = 0;

  virtual Mat drift(const Mat& x) const = 0;
  /// sigma(x_b) dw_b for every column b.
  virtual Mat diffuse(const Mat& x, const Mat& dw) const = 0;
  /// sigma(x), d x m.
  virtual Mat diffusion(const Vec& x) const = 0;
  /// D mu(x), d x d.
  virtual Mat drift_jacobian(const Vec& x) const = 0;

  /// sum_i d mu_i / d x_i
  virtual Vec div_drift(const Mat& x) const = 0;
  /// j-th entry: sum_i d a_ij / d x_i, where a = sigma sigma^T.
  virtual Mat grad_div_a(const Mat& x) const;
  /// sum_ij d^2 a_ij / d x_i d x_j
  virtual Vec lap_a(const Mat& x) const;

  /// a(x_b) w_b per column.
  virtual Mat cov_times(const Mat& x, const Mat& w) const;
  /// |sigma(x_b)^T w_b|^2 per column.
  virtual Vec sigma_t_norm2(const Mat& x, const Mat& w) const;

  virtual bool constant_diffusion() const { return false; }
  /// Drift matrix A when mu(x) = A x and sigma is constant.
  virtual std::optional<Mat> drift_matrix() const { return std::nullopt; }

  Vec drift_at(const Vec& x) const { return drift(x); }
  Mat covariance_at(const Vec& x) const {
    const Mat s = diffusion(x);
    return s * s.transpose();
  }
};

/// Constant sigma. grad_div_a and lap_a vanish.
class AdditiveNoiseSde : public SdeModel {
 public:
  explicit AdditiveNoiseSde(Mat sigma);

  int noise_dim() const override { return static_cast<int>(sigma_.cols()); }
  Mat diffuse(const Mat& x, const Mat& dw) const override;
  Mat diffusion(const Vec& x) const override;
  Mat cov_times(const Mat& x, const Mat& w) const override;
  Vec sigma_t_norm2(const Mat& x, const Mat& w) const override;
  bool constant_diffusion() const override { return true; }

  const Mat& sigma() const { return sigma_; }

 protected:
  Mat sigma_;
  Mat a_;
};

/// mu(x) = A x, constant sigma. Ornstein-Uhlenbeck and spring-mass.
class LinearSde : public AdditiveNoiseSde {
 public:
  LinearSde(std::string name, Mat a, Mat sigma);

  std::string name() const override { return name_; }
  int state_dim() const override { return static_cast<int>(a_mat_.rows()); }
  Mat drift(const Mat& x) const override { return a_mat_ * x; }
  Mat drift_jacobian(const Vec&) const override { return a_mat_; }
  Vec div_drift(const Mat& x) const override;
  std::optional<Mat> drift_matrix() const override { return a_mat_; }

 private:
  std::string name_;
  Mat a_mat_;
};

/// mu(x) = -(2/5)(5x - x^3), sigma = 1.
/// mu(x) = -s (2/5)(5x - x^3). s = +1 is the formula as printed, which is
/// stable at 0 and explodes past |x| = sqrt(5); s = -1 gives the double well
/// with modes at +-sqrt(5) that the surrounding prose describes.
class BistableSde : public AdditiveNoiseSde {
 public:
  explicit BistableSde(double drift_sign = 1.0);
  double drift_sign() const { return sign_; }
  std::string name() const override { return "bistable"; }
  int state_dim() const override { return 1; }
  Mat drift(const Mat& x) const override;
  Mat drift_jacobian(const Vec& x) const override;
  Vec div_drift(const Mat& x) const override;

 private:
  double sign_;
};

/// Chemical Langevin approximation of the Schlogl reaction network with the
/// four reaction channels merged into one scalar noise, sigma = sqrt(sum b_i).
/// Reaction rates are clamped at zero; every clamped evaluation increments
/// domain_warnings().
class SchloglSde : public SdeModel {
 public:
  struct Rates {
    double b[4];
    double db[4];
    double d2b[4];
    bool clamped;
  };

  /// b4_sign selects mu = b1 - b2 + b3 + b4_sign * b4.
  explicit SchloglSde(double b4_sign = 1.0);

  std::string name() const override { return "schlogl"; }
  int state_dim() const override { return 1; }
  int noise_dim() const override { return 1; }
  Mat drift(const Mat& x) const override;
  Mat diffuse(const Mat& x, const Mat& dw) const override;
  Mat diffusion(const Vec& x) const override;
  Mat drift_jacobian(const Vec& x) const override;
  Vec div_drift(const Mat& x) const override;
  Mat grad_div_a(const Mat& x) const override;
  Vec lap_a(const Mat& x) const override;
  Mat cov_times(const Mat& x, const Mat& w) const override;
  Vec sigma_t_norm2(const Mat& x, const Mat& w) const override;

  Rates rates(double x) const;
  /// Unclamped channel rate b_i(x), i in 1..4.
  double raw_rate(int i, double x) const;
  double b4_sign() const { return b4_sign_; }
  std::uint64_t domain_warnings() const { return warnings_.load(); }

  static constexpr double kTheta[4] = {3e-7, 1e-4, 1e-3, 3.5};
  static constexpr double kA = 1e5;
  static constexpr double kB = 2e5;

 private:
  double b4_sign_;
  mutable std::atomic<std::uint64_t> warnings_{0};
};

/// mu(x)_i = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F with cyclic indices,
/// sigma = s I.
class Lorenz96Sde : public AdditiveNoiseSde {
 public:
  Lorenz96Sde(int d, double forcing, double sigma);
  std::string name() const override { return "l96"; }
  int state_dim() const override { return d_; }
  Mat drift(const Mat& x) const override;
  Mat drift_jacobian(const Vec& x) const override;
  Vec div_drift(const Mat& x) const override;
  double forcing() const { return forcing_; }

 private:
  int d_;
  double forcing_;
};

/// User-defined model from point-wise drift and diffusion callables. Every
/// derivative is a central finite difference with step fd_step (default
/// 1e-4; second derivatives of a carry O(step^2) truncation error and roughly
/// 1e-8 rounding error for O(1) coefficients). Not used by the built-in zoo.
class GenericSde : public SdeModel {
 public:
  using DriftFn = std::function<Vec(const Vec&)>;
  using DiffusionFn = std::function<Mat(const Vec&)>;

  GenericSde(std::string name, int d, int m, DriftFn drift, DiffusionFn diffusion,
             double fd_step = 1e-4);

  std::string name() const override { return name_; }
  int state_dim() const override { return d_; }
  int noise_dim() const override { return m_; }
  Mat drift(const Mat& x) const override;
  Mat diffuse(const Mat& x, const Mat& dw) const override;
  Mat diffusion(const Vec& x) const override { return diffusion_fn_(x); }
  Mat drift_jacobian(const Vec& x) const override;
  Vec div_drift(const Mat& x) const override;
  Mat grad_div_a(const Mat& x) const override;
  Vec lap_a(const Mat& x) const override;

 private:
  Mat a_at(const Vec& x) const;

  std::string name_;
  int d_;
  int m_;
  DriftFn drift_fn_;
  DiffusionFn diffusion_fn_;
  double h_;
};

/// O_k = h(S_{t_k}) + V_k, V_k ~ N(0, R).
class ObservationModel {
 public:
  ObservationModel(int state_dim, Mat noise_cov);
  virtual ~ObservationModel() = default;

  int state_dim() const { return state_dim_; }
  int obs_dim() const { return static_cast<int>(noise_cov_.rows()); }
  const Mat& noise_cov() const { return noise_cov_; }
  const Mat& noise_chol() const { return noise_chol_; }
  double noise_log_det() const { return log_det_; }

  virtual Mat h(const Mat& x) const = 0;
  virtual Mat jacobian(const Vec& x) const = 0;

  /// log N(o_b | h(x_b), R) per column; o has one column (shared) or one
  /// per column of x.
  Vec log_likelihood(const Mat& o, const Mat& x) const;
  /// grad_x log N(o_b | h(x_b), R) per column, o as above.
  virtual Mat grad_log_likelihood(const Mat& o, const Mat& x) const;
  /// V ~ N(0, R), one draw per column.
  Mat sample_noise(Rng& rng, Eigen::Index n) const;

 protected:
  Mat whiten(Mat residual) const;
  /// o_b - h(x_b)
  Mat residual(const Mat& o, const Mat& x) const;

  int state_dim_;
  Mat noise_cov_;
  Mat noise_chol_;
  double log_det_;
};

/// h(x) = H x.
class LinearObservation : public ObservationModel {
 public:
  LinearObservation(Mat h_matrix, Mat noise_cov);
  Mat h(const Mat& x) const override { return h_ * x; }
  Mat jacobian(const Vec&) const override { return h_; }
  Mat grad_log_likelihood(const Mat& o, const Mat& x) const override;
  const Mat& matrix() const { return h_; }

 private:
  Mat h_;
  Mat ht_rinv_;
};

/// Scalar h(x) = log(1 + max(x, 0)).
class Log1pObservation : public ObservationModel {
 public:
  explicit Log1pObservation(double noise_var);
  Mat h(const Mat& x) const override;
  Mat jacobian(const Vec& x) const override;
};

/// log N(o | h(x), R), including the Gaussian normalization constant.
double log_likelihood(const ObservationModel& obs, const Vec& o, const Vec& x);

/// Finite Gaussian mixture; supports sampling, density and score.
class InitialDistribution {
 public:
  InitialDistribution() = default;
  InitialDistribution(std::vector<double> weights, std::vector<Gaussian> components);
  static InitialDistribution normal(Vec mean, Mat cov);

  int dim() const { return components_.front().dim(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Gaussian>& components() const { return components_; }

  Mat sample(Rng& rng, Eigen::Index n) const;
  Vec log_density(const Mat& x) const;
  Mat grad_log_density(const Mat& x) const;
  Vec mean() const;
  Mat covariance() const;

 private:
  std::vector<double> weights_;
  std::vector<Gaussian> components_;
};

/// A benchmark system: dynamics, observations, prior pi_0 and the
/// auxiliary-process initial law q_0 (equal to pi_0 unless stated).
struct Example {
  std::string name;
  std::shared_ptr<const SdeModel> model;
  std::shared_ptr<const ObservationModel> observation;
  InitialDistribution prior;
  InitialDistribution aux_init;
  nlohmann::json spec;

  int state_dim() const { return model->state_dim(); }
  int obs_dim() const { return observation->obs_dim(); }
  bool linear() const { return model->drift_matrix().has_value() && observation_linear(); }
  bool observation_linear() const {
    return dynamic_cast<const LinearObservation*>(observation.get()) != nullptr;
  }
};

Example ou_model(int d);
Example bistable_model(double drift_sign = 1.0);

struct SpringMassParams {
  std::vector<double> mass;     // r
  std::vector<double> stiffness;  // r + 1
  std::vector<double> damping;    // r + 1
  std::uint64_t seed = 0;

  /// m_i ~ U[0.8,1.2], k_i ~ U[0.8,1.2], c_i ~ U[0.15,0.25], drawn once.
  static SpringMassParams sample(int r, std::uint64_t seed);
  nlohmann::json to_json() const;
  static SpringMassParams from_json(const nlohmann::json& j);
};

Mat spring_mass_matrix(const SpringMassParams& p);
Example spring_mass_model(int r, std::uint64_t seed);
Example spring_mass_model(const SpringMassParams& params);

Example schlogl_model(double b4_sign = 1.0);

/// Stride of the Lorenz-96 observation map h(x)_i = x_{stride * i}
/// (1-based). Throws std::invalid_argument when d / d' is not integral.
int lorenz96_stride(int d, int d_prime);
Example lorenz96_model(int d, int d_prime, double forcing = 8.0, double sigma = 1.0);

/// Registry keyed by "ou", "bistable", "lsm", "schlogl", "l96". Parameters
/// are read from the same object, e.g. {"name":"l96","d":4,"d_obs":4}.
Example make_example(const nlohmann::json& spec);

}  // namespace dfw
