#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "dfw/rng.hpp"

namespace dfw {

enum class OutputActivation { kLinear, kExponential };

inline const char* to_string(OutputActivation a) {
  return a == OutputActivation::kLinear ? "linear" : "exponential";
}
OutputActivation output_activation_from_string(const std::string& s);

/// Fully connected ReLU network. Parameters live in one flat vector, layer by
/// layer as [W_l (column-major), b_l]. Batches are one sample per column.
template <typename Scalar>
class Mlp {
 public:
  using MatS = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using VecS = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  /// Activations saved by forward() for a later backward().
  struct Tape {
    std::vector<MatS> a;  // a[0] = input, a[l] = post-ReLU of hidden layer l
    MatS out;
  };

  Mlp() = default;
  Mlp(int input_dim, std::vector<int> hidden, int output_dim,
      OutputActivation act = OutputActivation::kLinear)
      : act_(act) {
    if (input_dim < 1 || output_dim < 1) throw std::invalid_argument("Mlp: dimensions must be >= 1");
    sizes_.push_back(input_dim);
    for (int h : hidden) {
      if (h < 1) throw std::invalid_argument("Mlp: hidden width must be >= 1");
      sizes_.push_back(h);
    }
    sizes_.push_back(output_dim);
    offsets_.push_back(0);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      offsets_.push_back(offsets_.back() + Eigen::Index(sizes_[l + 1]) * (sizes_[l] + 1));
    }
    params_ = VecS::Zero(offsets_.back());
  }

  static Eigen::Index parameter_count(int input_dim, const std::vector<int>& hidden, int output_dim) {
    Eigen::Index n = 0;
    int prev = input_dim;
    for (int h : hidden) {
      n += Eigen::Index(h) * (prev + 1);
      prev = h;
    }
    return n + Eigen::Index(output_dim) * (prev + 1);
  }

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  std::vector<int> hidden() const { return {sizes_.begin() + 1, sizes_.end() - 1}; }
  OutputActivation activation() const { return act_; }
  Eigen::Index size() const { return params_.size(); }

  VecS& params() { return params_; }
  const VecS& params() const { return params_; }

  Eigen::Map<MatS> weight(int l) {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<const MatS> weight(int l) const {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<VecS> bias(int l) {
    return {params_.data() + offsets_[l] + Eigen::Index(sizes_[l + 1]) * sizes_[l], sizes_[l + 1]};
  }
  Eigen::Map<const VecS> bias(int l) const {
    return {params_.data() + offsets_[l] + Eigen::Index(sizes_[l + 1]) * sizes_[l], sizes_[l + 1]};
  }

  bool same_architecture(const Mlp& o) const { return sizes_ == o.sizes_ && act_ == o.act_; }

  /// He initialization: W ~ N(0, 2 / fan_in), b = 0.
  void init_he(Rng& rng) {
    for (int l = 0; l < num_layers(); ++l) {
      const double s = std::sqrt(2.0 / sizes_[l]);
      auto w = weight(l);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = Scalar(s * rng.normal());
      bias(l).setZero();
    }
  }

  MatS forward(const MatS& x) const {
    Tape t;
    forward(x, t);
    return std::move(t.out);
  }

  const MatS& forward(const MatS& x, Tape& t) const { return forward_impl(x, t, true); }

  /// Output before the output activation, i.e. the log of the output of an
  /// exponential network. Avoids underflow of exp for very small values.
  MatS forward_preactivation(const MatS& x) const {
    Tape t;
    forward_impl(x, t, false);
    return std::move(t.out);
  }

  /// Reverse pass for dLoss/dOut = grad_out. Adds parameter gradients into
  /// *grad_params (if given, sized size()) and returns dLoss/dInput.
  MatS backward(const Tape& t, const MatS& grad_out, VecS* grad_params) const {
    const int L = num_layers();
    MatS delta = act_ == OutputActivation::kExponential ? MatS(grad_out.cwiseProduct(t.out)) : grad_out;
    for (int l = L - 1; l >= 0; --l) {
      if (grad_params) {
        Eigen::Map<MatS> gw(grad_params->data() + offsets_[l], sizes_[l + 1], sizes_[l]);
        Eigen::Map<VecS> gb(grad_params->data() + offsets_[l] + Eigen::Index(sizes_[l + 1]) * sizes_[l],
                            sizes_[l + 1]);
        gw.noalias() += delta * t.a[l].transpose();
        gb += delta.rowwise().sum();
      }
      MatS prev;
      prev.noalias() = weight(l).transpose() * delta;
      if (l > 0) prev = prev.cwiseProduct((t.a[l].array() > Scalar(0)).template cast<Scalar>().matrix());
      delta = std::move(prev);
    }
    return delta;
  }

  /// Gradient of a scalar-output network with respect to its input, one
  /// column per sample. Also returns the outputs through *value if given.
  MatS input_gradient(const MatS& x, MatS* value = nullptr) const {
    if (output_dim() != 1) throw std::logic_error("Mlp::input_gradient: scalar output required");
    Tape t;
    forward(x, t);
    MatS g = backward(t, MatS::Ones(1, x.cols()), nullptr);
    if (value) *value = std::move(t.out);
    return g;
  }

 private:
  const MatS& forward_impl(const MatS& x, Tape& t, bool apply_out) const {
    if (x.rows() != input_dim()) throw std::invalid_argument("Mlp::forward: input has wrong row count");
    const int L = num_layers();
    t.a.resize(L);
    t.a[0] = x;
    for (int l = 0; l + 1 < L; ++l) {
      MatS& next = t.a[l + 1];
      next.noalias() = weight(l) * t.a[l];
      next.colwise() += bias(l);
      next = next.cwiseMax(Scalar(0));
    }
    t.out.noalias() = weight(L - 1) * t.a[L - 1];
    t.out.colwise() += bias(L - 1);
    if (apply_out && act_ == OutputActivation::kExponential) t.out = t.out.array().exp().matrix();
    return t.out;
  }

  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  OutputActivation act_ = OutputActivation::kLinear;
  VecS params_;
};

/// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
template <typename Scalar>
class Adam {
 public:
  using VecS = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  explicit Adam(Eigen::Index n = 0) { reset(n); }

  void reset(Eigen::Index n) {
    m_ = VecS::Zero(n);
    v_ = VecS::Zero(n);
    t_ = 0;
  }

  void step(VecS& params, const VecS& grad, double lr) {
    if (grad.size() != m_.size()) throw std::invalid_argument("Adam::step: size mismatch");
    ++t_;
    m_ = kBeta1 * m_ + (1 - kBeta1) * grad;
    v_ = kBeta2 * v_ + (1 - kBeta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(kBeta1, double(t_));
    const double c2 = 1.0 - std::pow(kBeta2, double(t_));
    const Scalar a = Scalar(lr / c1);
    params.array() -= a * m_.array() / ((v_.array() / Scalar(c2)).sqrt() + Scalar(kEps));
  }

  long steps() const { return t_; }
  const VecS& first_moment() const { return m_; }
  const VecS& second_moment() const { return v_; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  VecS m_, v_;
  long t_ = 0;
};

struct LrSchedule {
  double eta_max = 1e-4;
  double eta_min = 1e-4;  // equal to eta_max for a constant rate
  int cycle = 80;         // C
  int patience = 50;      // P
  int window = 200;       // iterations per monitored loss average

  static LrSchedule constant(double eta) { return {eta, eta}; }
  static LrSchedule cosine(double eta_max, double eta_min) { return {eta_max, eta_min}; }

  /// eta_c = eta_min + (eta_max - eta_min)(1 + cos(pi c / C)) / 2
  double rate(int c) const {
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(std::numbers::pi * c / cycle));
  }
};

/// Early stopping and learning-rate state. The loss is averaged over blocks
/// of `window` iterations; each completed block is compared with the previous
/// one and the patience counter p grows on a non-decrease and resets on a
/// decrease. Training stops once p reaches P. The cycle position c advances
/// by one per iteration while p > P/2 and stays at C afterwards.
class LossMonitor {
 public:
  explicit LossMonitor(LrSchedule s = {}) : s_(s) {}

  double learning_rate() const { return s_.rate(c_); }

  /// Feeds one iteration's loss; returns true when training should stop.
  bool observe(double loss) {
    sum_ += loss;
    if (++in_window_ == s_.window) {
      const double mean = sum_ / s_.window;
      sum_ = 0.0;
      in_window_ = 0;
      if (have_prev_) {
        p_ = mean < prev_ ? 0 : p_ + 1;
        ++comparisons_;
      }
      prev_ = mean;
      have_prev_ = true;
      history_.push_back(mean);
    }
    if (2 * p_ > s_.patience && c_ < s_.cycle) ++c_;
    return p_ >= s_.patience;
  }

  int patience_counter() const { return p_; }
  int cycle_position() const { return c_; }
  int comparisons() const { return comparisons_; }
  const std::vector<double>& window_means() const { return history_; }
  const LrSchedule& schedule() const { return s_; }

 private:
  LrSchedule s_;
  int p_ = 0;
  int c_ = 0;
  int in_window_ = 0;
  int comparisons_ = 0;
  double sum_ = 0.0;
  double prev_ = 0.0;
  bool have_prev_ = false;
  std::vector<double> history_;
};

/// Optimizer plus schedule for one network's training phase.
template <typename Scalar>
struct TrainState {
  Adam<Scalar> adam;
  LossMonitor monitor;

  TrainState(Eigen::Index n, LrSchedule s) : adam(n), monitor(s) {}
};

/// Copy of prev for use as the starting point of the next network. The
/// optimizer state is not carried over; callers build a fresh TrainState.
template <typename Scalar>
Mlp<Scalar> warm_start(const Mlp<Scalar>& prev) {
  return prev;
}

/// Copies parameters between networks of identical architecture.
template <typename Scalar>
void copy_parameters(const Mlp<Scalar>& from, Mlp<Scalar>& to) {
  if (!from.same_architecture(to)) throw std::invalid_argument("copy_parameters: architecture mismatch");
  to.params() = from.params();
}

/// Checkpoint in the blob container: header {"architecture": {...},
/// "meta": meta}, payload = flat parameters.
void save_mlp(const std::filesystem::path& path, const Mlp<double>& net,
              const nlohmann::json& meta = nlohmann::json::object());
Mlp<double> load_mlp(const std::filesystem::path& path, nlohmann::json* meta = nullptr);
nlohmann::json architecture_json(const Mlp<double>& net);

}  // namespace dfw
