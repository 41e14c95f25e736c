#include "dfw/deep_filter.hpp"

#include <fstream>
#include <string>

namespace dfw {
namespace {

/// Rows [r0, r0 + n) of hist, or an empty d' x 0 history.
Mat hist_rows(const Mat& hist, Eigen::Index r0, Eigen::Index n) { return hist.middleRows(r0, n); }

void require_finite(const Vec& v, const std::string& what) {
  if (!v.allFinite()) throw NumericalDivergence(what);
}

std::string net_file(const std::string& stem, int k, int n = -1) {
  return n < 0 ? stem + "_" + std::to_string(k) + ".blob"
               : stem + "_" + std::to_string(k) + "_" + std::to_string(n) + ".blob";
}

}  // namespace

std::string to_string(DeepMethod m) {
  switch (m) {
    case DeepMethod::kDsf: return "dsf";
    case DeepMethod::kLogDsf: return "logdsf";
    case DeepMethod::kBsdef: return "bsdef";
    case DeepMethod::kLogBsdef: return "logbsdef";
  }
  return "?";
}

DeepMethod deep_method_from_string(const std::string& s) {
  if (s == "dsf") return DeepMethod::kDsf;
  if (s == "logdsf") return DeepMethod::kLogDsf;
  if (s == "bsdef") return DeepMethod::kBsdef;
  if (s == "logbsdef") return DeepMethod::kLogBsdef;
  throw std::invalid_argument("unknown deep filter method '" + s + "'");
}

DensityFilter::DensityFilter(DeepMethod method, Example example, TimeGrid grid, NetworkSpec spec)
    : method_(method), example_(std::move(example)), grid_(grid), spec_(spec) {}

Mat DensityFilter::make_input(const Mat& x, const Mat& hist) const {
  const int d = example_.state_dim();
  if (x.rows() != d) throw std::invalid_argument("make_input: state has wrong dimension");
  if (hist.rows() > input_dim() - d) throw std::invalid_argument("make_input: observation history too long");
  Mat in = Mat::Zero(input_dim(), x.cols());
  in.topRows(d) = x;
  if (hist.rows() > 0) {
    if (hist.cols() == 1) {
      in.middleRows(d, hist.rows()).colwise() = hist.col(0);
    } else if (hist.cols() == x.cols()) {
      in.middleRows(d, hist.rows()) = hist;
    } else {
      throw std::invalid_argument("make_input: history batch does not match state batch");
    }
  }
  return in;
}

Mlp<double> DensityFilter::new_phi(Rng& rng) const {
  Mlp<double> net(input_dim(), std::vector<int>(spec_.hidden_layers, spec_.width_phi), 1,
                  is_log(method_) ? OutputActivation::kLinear : OutputActivation::kExponential);
  net.init_he(rng);
  return net;
}

Mlp<double> DensityFilter::new_vbar(Rng& rng) const {
  Mlp<double> net(input_dim(), std::vector<int>(spec_.hidden_layers, spec_.width_v), example_.state_dim(),
                  OutputActivation::kLinear);
  net.init_he(rng);
  return net;
}

bool DensityFilter::has_predictor(int k) const {
  if (k < 0) return false;
  if (is_bsde(method_)) return k < int(phi_.size());
  return k < int(dsf_.size()) && int(dsf_[k].size()) == grid_.substeps;
}

const Mlp<double>& DensityFilter::predictor(int k) const {
  if (!has_predictor(k)) throw std::out_of_range("density filter: step " + std::to_string(k) + " not trained");
  return is_bsde(method_) ? phi_[k] : dsf_[k].back();
}

int DensityFilter::trained_steps() const {
  int k = 0;
  while (has_predictor(k)) ++k;
  return k;
}

Vec DensityFilter::predictor_value(int k, const Mat& x, const Mat& hist) const {
  return predictor(k).forward(make_input(x, hist)).row(0).transpose();
}

Vec DensityFilter::predicted_log_density(int k, const Mat& x, const Mat& hist) const {
  const Mat in = make_input(x, hist);
  if (is_log(method_)) return -predictor(k).forward(in).row(0).transpose();
  return predictor(k).forward_preactivation(in).row(0).transpose();
}

Vec DensityFilter::log_density(int k, const Mat& x, const Mat& obs_seq) const {
  if (k < 1 || k > grid_.observations) throw std::out_of_range("log_density: k must be in 1..K");
  if (obs_seq.cols() < k) throw std::invalid_argument("log_density: observation sequence too short");
  const int dp = example_.obs_dim();
  const Mat hist = Eigen::Map<const Mat>(obs_seq.data(), Eigen::Index(dp) * (k - 1), 1);
  return predicted_log_density(k - 1, x, hist) + example_.observation->log_likelihood(obs_seq.col(k - 1), x);
}

std::optional<double> DensityFilter::cached_log_z(std::uint64_t seq, int k) const {
  std::lock_guard lock(*zmutex_);
  auto it = zcache_.find({seq, k});
  if (it == zcache_.end()) return std::nullopt;
  return it->second;
}

void DensityFilter::cache_log_z(std::uint64_t seq, int k, double log_z) {
  std::lock_guard lock(*zmutex_);
  zcache_[{seq, k}] = log_z;
}

void DensityFilter::invalidate() {
  std::lock_guard lock(*zmutex_);
  zcache_.clear();
}

void DensityFilter::save(const std::filesystem::path& dir, const nlohmann::json& meta) const {
  std::filesystem::create_directories(dir);
  nlohmann::json m = {{"method", to_string(method_)},
                      {"model", example_.spec},
                      {"grid", grid_.to_json()},
                      {"network",
                       {{"hidden_layers", spec_.hidden_layers},
                        {"width_phi", spec_.width_phi},
                        {"width_v", spec_.width_v}}},
                      {"trained_steps", trained_steps()},
                      {"meta", meta}};
  for (std::size_t k = 0; k < dsf_.size(); ++k)
    for (std::size_t n = 0; n < dsf_[k].size(); ++n)
      save_mlp(dir / net_file("phi", int(k), int(n + 1)), dsf_[k][n], {{"k", k}, {"n", n + 1}});
  for (std::size_t k = 0; k < phi_.size(); ++k) save_mlp(dir / net_file("phi", int(k)), phi_[k], {{"k", k}});
  for (std::size_t k = 0; k < vbar_.size(); ++k)
    for (std::size_t n = 0; n < vbar_[k].size(); ++n)
      save_mlp(dir / net_file("vbar", int(k), int(n)), vbar_[k][n], {{"k", k}, {"n", n}});
  std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";
}

DensityFilter DensityFilter::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  const nlohmann::json m = nlohmann::json::parse(in);
  const auto& net = m.at("network");
  DensityFilter f(deep_method_from_string(m.at("method")), make_example(m.at("model")),
                  TimeGrid::from_json(m.at("grid")),
                  {net.at("hidden_layers"), net.at("width_phi"), net.at("width_v")});
  const int steps = m.at("trained_steps");
  for (int k = 0; k < steps; ++k) {
    if (is_bsde(f.method_)) {
      f.phi_.push_back(load_mlp(dir / net_file("phi", k)));
      f.vbar_.emplace_back();
      for (int n = 0; n < f.grid_.substeps; ++n) {
        const auto p = dir / net_file("vbar", k, n);
        if (std::filesystem::exists(p)) f.vbar_.back().push_back(load_mlp(p));
      }
    } else {
      f.dsf_.emplace_back();
      for (int n = 1; n <= f.grid_.substeps; ++n) f.dsf_.back().push_back(load_mlp(dir / net_file("phi", k, n)));
    }
  }
  return f;
}

Vec g_tau(const DensityFilter& filter, const Mlp<double>& net, const Mat& x, const Mat& hist, double tau) {
  Mat value;
  const Mat grad = net.input_gradient(filter.make_input(x, hist), &value);
  const FpCoefficient coef(filter.example().model);
  const auto t = coef.terms(x);
  const Vec u = value.row(0).transpose();
  const Mat g = grad.topRows(x.rows());
  return u + tau * (is_log(filter.method()) ? coef.f_log(t, g) : coef.f(t, u, g));
}

TargetValue ds_inner(const DensityFilter& filter, int k, int n, const Mat& x, const Mat& hist, const Vec* log_z) {
  const Example& ex = filter.example();
  const bool log_mode = is_log(filter.method());
  const int d = ex.state_dim();
  const int dp = ex.obs_dim();
  TargetValue out;
  if (n >= 1) {
    Mat value;
    const Mat grad = filter.dsf_nets().at(k).at(n - 1).input_gradient(filter.make_input(x, hist), &value);
    out.value = value.row(0).transpose();
    out.grad = grad.topRows(d);
    return out;
  }
  if (k == 0) {
    const Vec lp = ex.prior.log_density(x);
    const Mat glp = ex.prior.grad_log_density(x);
    if (log_mode) {
      out.value = -lp;
      out.grad = -glp;
    } else {
      out.value = lp.array().exp().matrix();
      out.grad = glp * out.value.asDiagonal();
    }
    return out;
  }
  Mat value;
  const Mat prev_hist = hist_rows(hist, 0, Eigen::Index(dp) * (k - 1));
  const Mat o_k = hist_rows(hist, Eigen::Index(dp) * (k - 1), dp);
  const Mat grad = filter.predictor(k - 1).input_gradient(filter.make_input(x, prev_hist), &value);
  const Vec phi = value.row(0).transpose();
  const Vec ll = ex.observation->log_likelihood(o_k, x);
  const Mat gll = ex.observation->grad_log_likelihood(o_k, x);
  if (log_mode) {
    out.value = phi - ll;
    if (log_z) out.value += *log_z;
    out.grad = grad.topRows(d) - gll;
  } else {
    Vec scale = ll;
    if (log_z) scale -= *log_z;
    scale = scale.array().exp().matrix();
    out.value = phi.cwiseProduct(scale);
    out.grad = (grad.topRows(d) + gll * phi.asDiagonal()) * scale.asDiagonal();
  }
  return out;
}

Vec ds_target(const DensityFilter& filter, int k, int n, const Mat& x, const Mat& hist, const Vec* log_z) {
  const TargetValue g = ds_inner(filter, k, n, x, hist, log_z);
  const FpCoefficient coef(filter.example().model);
  const auto t = coef.terms(x);
  const double tau = filter.grid().tau();
  return g.value + tau * (is_log(filter.method()) ? coef.f_log(t, g.grad) : coef.f(t, g.value, g.grad));
}

Vec bsde_terminal(const DensityFilter& filter, int k, const Mat& x, const Mat& hist, const Vec* log_z) {
  const Example& ex = filter.example();
  const bool log_mode = is_log(filter.method());
  if (k == 0) {
    const Vec lp = ex.prior.log_density(x);
    return log_mode ? Vec(-lp) : Vec(lp.array().exp().matrix());
  }
  const int dp = ex.obs_dim();
  const Mat prev_hist = hist_rows(hist, 0, Eigen::Index(dp) * (k - 1));
  const Mat o_k = hist_rows(hist, Eigen::Index(dp) * (k - 1), dp);
  const Vec ll = ex.observation->log_likelihood(o_k, x);
  if (log_mode) {
    Vec out = filter.predictor_value(k - 1, x, prev_hist) - ll;
    if (log_z) out += *log_z;
    return out;
  }
  // log phi + log L - log Z, exponentiated once
  Vec lv = filter.predicted_log_density(k - 1, x, prev_hist) + ll;
  if (log_z) lv -= *log_z;
  return lv.array().exp().matrix();
}

BsdeRollout bsde_rollout(const DensityFilter& filter, const Mlp<double>& phi, const std::vector<Mlp<double>>& vbar,
                         const std::vector<Mat>& x, const std::vector<Mat>& dw, const Mat& hist) {
  const int n_steps = static_cast<int>(dw.size());
  if (int(x.size()) != n_steps + 1 || int(vbar.size()) < n_steps) {
    throw std::invalid_argument("bsde_rollout: path, increments and networks are inconsistent");
  }
  const SdeModel& model = *filter.example().model;
  const FpCoefficient coef(filter.example().model);
  const bool log_mode = is_log(filter.method());
  const double tau = filter.grid().tau();
  BsdeRollout r;
  Vec y = phi.forward(filter.make_input(x[0], hist), r.phi_tape).row(0).transpose();
  r.v_tapes.resize(n_steps);
  r.v.reserve(n_steps);
  r.sigma_dw.reserve(n_steps);
  r.terms.reserve(n_steps);
  for (int n = 0; n < n_steps; ++n) {
    r.terms.push_back(coef.terms(x[n]));
    r.v.push_back(vbar[n].forward(filter.make_input(x[n], hist), r.v_tapes[n]));
    r.sigma_dw.push_back(model.diffuse(x[n], dw[n]));
    const Vec f = log_mode ? coef.f_log(r.terms[n], r.v[n]) : coef.f(r.terms[n], y, r.v[n]);
    y += -tau * f + r.v[n].cwiseProduct(r.sigma_dw[n]).colwise().sum().transpose();
    require_finite(y, "bsde_rollout: non-finite Y at step " + std::to_string(n + 1));
  }
  r.y_terminal = std::move(y);
  return r;
}

BsdeGradients bsde_backward(const DensityFilter& filter, const Mlp<double>& phi, const std::vector<Mlp<double>>& vbar,
                            const BsdeRollout& r, const Vec& target) {
  const FpCoefficient coef(filter.example().model);
  const bool log_mode = is_log(filter.method());
  const double tau = filter.grid().tau();
  const int n_steps = static_cast<int>(r.v.size());
  const double b = double(target.size());
  BsdeGradients g;
  const Vec diff = r.y_terminal - target;
  g.loss = diff.squaredNorm() / b;
  Vec lambda = 2.0 * diff / b;
  g.vbar.resize(n_steps);
  for (int n = n_steps - 1; n >= 0; --n) {
    const Mat dfdw = log_mode ? coef.df_log_dw(r.terms[n], r.v[n]) : coef.df_dv(r.terms[n]);
    const Mat gv = (r.sigma_dw[n] - tau * dfdw) * lambda.asDiagonal();
    g.vbar[n] = Eigen::VectorXd::Zero(vbar[n].size());
    vbar[n].backward(r.v_tapes[n], gv, &g.vbar[n]);
    if (!log_mode) lambda = lambda.cwiseProduct((1.0 - tau * coef.df_du(r.terms[n]).array()).matrix());
  }
  g.phi = Eigen::VectorXd::Zero(phi.size());
  phi.backward(r.phi_tape, lambda.transpose(), &g.phi);
  return g;
}

}  // namespace dfw
