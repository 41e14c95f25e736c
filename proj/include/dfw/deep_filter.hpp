#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dfw/coefficients.hpp"
#include "dfw/models.hpp"
#include "dfw/nn.hpp"
#include "dfw/normalize.hpp"
#include "dfw/sim.hpp"

namespace dfw {

enum class DeepMethod { kDsf, kLogDsf, kBsdef, kLogBsdef };

std::string to_string(DeepMethod m);
DeepMethod deep_method_from_string(const std::string& s);
inline bool is_log(DeepMethod m) { return m == DeepMethod::kLogDsf || m == DeepMethod::kLogBsdef; }
inline bool is_bsde(DeepMethod m) { return m == DeepMethod::kBsdef || m == DeepMethod::kLogBsdef; }

struct NetworkSpec {
  int hidden_layers = 3;
  int width_phi = 128;
  int width_v = 32;  // BSDE methods only
};

/// The trained network stack of a deep density filter and its evaluation.
///
/// Networks take [x, o_1, ..., o_k, 0, ..., 0] of width d + d'(K-1).
/// DSF: phi(k, n) for k = 0..K-1, n = 1..N; the filter at t_{k+1} uses
/// phi(k, N). BSDEF: phi(k) and vbar(k, n), n = 0..N-1.
/// Plain modes represent the predicted density itself (exponential output);
/// log modes represent v = -log p (linear output).
class DensityFilter {
 public:
  DensityFilter(DeepMethod method, Example example, TimeGrid grid, NetworkSpec spec);

  DeepMethod method() const { return method_; }
  const Example& example() const { return example_; }
  const TimeGrid& grid() const { return grid_; }
  const NetworkSpec& spec() const { return spec_; }
  int input_dim() const { return example_.state_dim() + example_.obs_dim() * (grid_.observations - 1); }

  /// Builds inputs for x (d x B) with observations o_{1:k}: either one
  /// history for every column (hist.cols() == 1) or one per column; hist has
  /// d' k rows.
  Mat make_input(const Mat& x, const Mat& hist) const;

  Mlp<double> new_phi(Rng& rng) const;
  Mlp<double> new_vbar(Rng& rng) const;

  /// Network approximating the predicted (log-)density at t_{k+1}.
  const Mlp<double>& predictor(int k) const;
  bool has_predictor(int k) const;
  /// Number of leading observation steps k with a trained predictor.
  int trained_steps() const;

  std::vector<std::vector<Mlp<double>>>& dsf_nets() { return dsf_; }
  std::vector<Mlp<double>>& phi_nets() { return phi_; }
  std::vector<std::vector<Mlp<double>>>& vbar_nets() { return vbar_; }
  const std::vector<std::vector<Mlp<double>>>& dsf_nets() const { return dsf_; }
  const std::vector<Mlp<double>>& phi_nets() const { return phi_; }
  const std::vector<std::vector<Mlp<double>>>& vbar_nets() const { return vbar_; }

  /// Raw output of predictor(k) at x given o_{1:k} (d' k x 1 or per column).
  Vec predictor_value(int k, const Mat& x, const Mat& hist) const;
  /// log of the predicted density p(t_{k+1}) up to a constant: log phi in
  /// plain modes (exact for the exponential output), -phi in log modes.
  Vec predicted_log_density(int k, const Mat& x, const Mat& hist) const;

  /// Unnormalized log filter density at t_k, k = 1..K, for the observation
  /// sequence obs_seq (d' x k' with k' >= k): log phi_{k-1} + log L(o_k, x)
  /// in plain modes, -(phi_{k-1} - log L(o_k, x)) in log modes.
  Vec log_density(int k, const Mat& x, const Mat& obs_seq) const;

  /// Cached log Z per (sequence id, k); cleared by invalidate().
  std::optional<double> cached_log_z(std::uint64_t seq, int k) const;
  void cache_log_z(std::uint64_t seq, int k, double log_z);
  void invalidate();

  /// Writes one checkpoint per network plus manifest.json.
  void save(const std::filesystem::path& dir, const nlohmann::json& meta = nlohmann::json::object()) const;
  static DensityFilter load(const std::filesystem::path& dir);

 private:
  DeepMethod method_;
  Example example_;
  TimeGrid grid_;
  NetworkSpec spec_;
  std::vector<std::vector<Mlp<double>>> dsf_;
  std::vector<Mlp<double>> phi_;
  std::vector<std::vector<Mlp<double>>> vbar_;
  std::map<std::pair<std::uint64_t, int>, double> zcache_;
  std::shared_ptr<std::mutex> zmutex_ = std::make_shared<std::mutex>();
};

/// (G^tau phi)(x) = phi(x) + tau f(x, phi(x), grad phi(x)), with f_log in
/// log modes. `net` has scalar output; hist as in make_input.
Vec g_tau(const DensityFilter& filter, const Mlp<double>& net, const Mat& x, const Mat& hist, double tau);

/// Value and x-gradient of the DSF recursion input g~_{k,n} at x.
struct TargetValue {
  Vec value;
  Mat grad;
};
TargetValue ds_inner(const DensityFilter& filter, int k, int n, const Mat& x, const Mat& hist,
                     const Vec* log_z = nullptr);

/// G^tau g~_{k,n}(x, o_{1:k}). hist holds o_{1:k} (d' k rows). log_z, when
/// given, holds per-column log Z of the Bayes-updated density (n = 0, k >= 1).
Vec ds_target(const DensityFilter& filter, int k, int n, const Mat& x, const Mat& hist,
              const Vec* log_z = nullptr);

/// Terminal condition g-bar_k at x: pi_0 / -log pi_0 at k = 0, and
/// phi_{k-1} L / phi_{k-1} - log L otherwise, optionally divided by Z.
Vec bsde_terminal(const DensityFilter& filter, int k, const Mat& x, const Mat& hist, const Vec* log_z = nullptr);

/// Discrete BSDE Y_0 = phi(X_0), Y_{n+1} = Y_n - tau F(X_n, Y_n, vbar_n) +
/// vbar_n^T sigma(X_n) dW_n with F = f or f_log.
struct BsdeRollout {
  Vec y_terminal;
  std::vector<Mlp<double>::Tape> v_tapes;
  Mlp<double>::Tape phi_tape;
  std::vector<Mat> sigma_dw;
  std::vector<Mat> v;
  std::vector<FpCoefficient::Terms> terms;
};
BsdeRollout bsde_rollout(const DensityFilter& filter, const Mlp<double>& phi,
                         const std::vector<Mlp<double>>& vbar, const std::vector<Mat>& x,
                         const std::vector<Mat>& dw, const Mat& hist);

/// Gradients of loss = mean((Y_N - target)^2) for the rollout above.
struct BsdeGradients {
  double loss = 0.0;
  Eigen::VectorXd phi;
  std::vector<Eigen::VectorXd> vbar;
};
BsdeGradients bsde_backward(const DensityFilter& filter, const Mlp<double>& phi,
                            const std::vector<Mlp<double>>& vbar, const BsdeRollout& r, const Vec& target);

}  // namespace dfw
