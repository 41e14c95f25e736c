// Acceptance checks, one line per criterion: `acceptance [n ...]`.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "dfw/bench.hpp"
#include "dfw/classical.hpp"
#include "dfw/coefficients.hpp"
#include "dfw/deep_filter.hpp"
#include "dfw/metrics.hpp"
#include "dfw/normalize.hpp"
#include "dfw/sim.hpp"
#include "test_util.hpp"

using namespace dfw;
using dfw::testing::GaussianTest;
using dfw::testing::rel_err;
using dfw::testing::log_transform_residual;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

nlohmann::json load_config(const std::string& name) {
  std::ifstream in(std::string(DFW_CONFIG_DIR) + "/" + name);
  if (!in) throw std::runtime_error("missing config " + name);
  return nlohmann::json::parse(in);
}

// Per (method, metric) vector over t_1..t_K.
using Series = std::map<std::pair<std::string, std::string>, std::vector<double>>;
Series collect(const std::vector<MetricRecord>& recs) {
  Series s;
  for (const auto& r : recs) s[{r.method, r.metric}].push_back(r.value);
  return s;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? NAN : s / double(v.size());
}

// 1 -------------------------------------------------------------------------

Outcome kalman_oracle() {
  const Example ou = ou_model(1);
  const TimeGrid grid{1.0, 10, 128};
  Rng rng(101);
  const auto [path, obs] = simulate_pair(ou, grid, rng);
  (void)path;
  GaussianBelief b = GaussianBelief::from(ou.prior);
  double m = 0.0, p = 1.0, worst = 0.0;
  const double a = std::exp(-grid.interval());
  for (int k = 1; k <= grid.observations; ++k) {
    b = kf_step(b, ou, grid.interval(), grid.substeps, obs.at(k));
    m *= a;
    p = p * a * a + 0.5 * (1.0 - a * a);
    const double gain = p / (p + 1.0);
    m += gain * (obs.at(k)[0] - m);
    p *= 1.0 - gain;
    worst = std::max({worst, std::abs(b.mean[0] - m), std::abs(b.cov(0, 0) - p)});
  }

  double ekf_worst = 0.0;
  for (const Example& ex : {ou_model(1), ou_model(10), spring_mass_model(5, 2024)}) {
    Rng r(7);
    const auto [s, o] = simulate_pair(ex, grid, r);
    (void)s;
    GaussianBelief kf = GaussianBelief::from(ex.prior), ekf = kf;
    for (int k = 1; k <= grid.observations; ++k) {
      kf = kf_step(kf, ex, grid.interval(), 32, o.at(k));
      ekf = ekf_step(ekf, ex, grid.interval(), 32, o.at(k));
      ekf_worst = std::max({ekf_worst, (kf.mean - ekf.mean).cwiseAbs().maxCoeff(),
                            (kf.cov - ekf.cov).cwiseAbs().maxCoeff()});
    }
  }
  return {worst < 1e-6 && ekf_worst < 1e-6,
          fmt("kf vs closed form max err %.2e; ekf vs kf (ou1, ou10, lsm10) max err %.2e", worst, ekf_worst)};
}

// 2 -------------------------------------------------------------------------

Outcome log_transform_identity() {
  Rng rng(2);
  double worst = 0.0;
  const Example ou1 = ou_model(1), ou3 = ou_model(3), bi = bistable_model(), dw = bistable_model(-1.0);
  for (int i = 0; i < 100; ++i) {
    const GaussianTest g1{Vec::Constant(1, rng.normal()), Mat::Constant(1, 1, 0.5 + rng.uniform())};
    const Vec x1 = Vec::Constant(1, 1.5 * rng.normal());
    for (const Example* ex : {&ou1, &bi, &dw}) worst = std::max(worst, std::abs(log_transform_residual(*ex->model, g1, x1)));
    Mat c = rng.normal_matrix(3, 3);
    const GaussianTest g3{rng.normal_matrix(3, 1), Mat(c * c.transpose() + Mat::Identity(3, 3))};
    worst = std::max(worst, std::abs(log_transform_residual(*ou3.model, g3, rng.normal_matrix(3, 1))));
  }
  return {worst < 1e-6, fmt("max residual %.2e over 100 points (ou 1d/3d, bistable both signs)", worst)};
}

// 3 -------------------------------------------------------------------------

Outcome pf_rate() {
  const Example ou = ou_model(1);
  const TimeGrid grid{1.0, 10, 32};
  const std::vector<int> sizes = {100, 1000, 10000};
  std::vector<double> err(sizes.size(), 0.0);
  const Rng root(3);
  const int seeds = 100;
  for (int s = 0; s < seeds; ++s) {
    Rng sim = root.substream(Stream::kTruth, s);
    const auto [path, obs] = simulate_pair(ou, grid, sim);
    (void)path;
    std::vector<Vec> kf_means;
    GaussianBelief b = GaussianBelief::from(ou.prior);
    for (int k = 1; k <= grid.observations; ++k) {
      b = kf_step(b, ou, grid.interval(), grid.substeps, obs.at(k));
      kf_means.push_back(b.mean);
    }
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      Rng rng = root.substream(Stream::kFilter, std::uint64_t(s) * 16 + i);
      ParticleCloud cloud = ParticleCloud::from(ou.prior, sizes[i], rng);
      double e = 0.0;
      for (int k = 1; k <= grid.observations; ++k) {
        ParticleCloud weighted;
        cloud = pf_step(cloud, ou, grid.interval(), grid.substeps, obs.at(k), rng, &weighted);
        e += (cloud_moments(weighted).mean - kf_means[k - 1]).norm();
      }
      err[i] += e / grid.observations / seeds;
    }
  }
  // least-squares slope of log err against log M
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = double(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double x = std::log(double(sizes[i])), y = std::log(err[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return {std::abs(slope + 0.5) <= 0.15 && err.back() < 0.05,
          fmt("slope %.3f (target -0.5 +- 0.15); FME at M=1e4 = %.4f (< 0.05); errors %.4f %.4f %.4f", slope,
              err.back(), err[0], err[1], err[2])};
}

// 4 -------------------------------------------------------------------------

Outcome enkf_consistency() {
  const Example ou = ou_model(1);
  const TimeGrid grid{1.0, 10, 64};
  const int m = 100000;
  Rng sim(4);
  const auto [path, obs] = simulate_pair(ou, grid, sim);
  (void)path;
  Rng rng(40);
  Mat ens = ou.prior.sample(rng, m);
  GaussianBelief kf = GaussianBelief::from(ou.prior);
  double worst = 0.0;  // in standard errors
  for (int k = 1; k <= grid.observations; ++k) {
    ens = enkf_step(ens, ou, grid.interval(), grid.substeps, obs.at(k), rng);
    kf = kf_step(kf, ou, grid.interval(), grid.substeps, obs.at(k));
    const Moments mo = ensemble_moments(ens);
    const double p = kf.cov(0, 0);
    const double se_mean = std::sqrt(p / m);
    const double se_var = p * std::sqrt(2.0 / (m - 1));
    worst = std::max({worst, std::abs(mo.mean[0] - kf.mean[0]) / se_mean, std::abs(mo.cov(0, 0) - p) / se_var});
  }
  return {worst < 3.0, fmt("max deviation %.2f standard errors over mean and variance at 10 t_k (M=1e5)", worst)};
}

// 5 -------------------------------------------------------------------------

Outcome logbsdef_ou() {
  ExperimentConfig cfg = ExperimentConfig::from_json(load_config("ou_logbsdef.json"));
  const ExperimentResult r = run_experiment(cfg);
  if (!r.manifest.failed_methods.empty()) return {false, "training failed: " + r.manifest.failed_methods.begin()->second};
  const Series s = collect(r.records);
  const auto& kld = s.at({"logbsdef", "kld"});
  const auto& rmae = s.at({"logbsdef", "rmae"});
  double worst_rmae = 0.0;
  for (double v : rmae) worst_rmae = std::max(worst_rmae, std::abs(v));
  const double avg_kld = mean_of(kld);
  double worst_kld = 0.0;
  for (double v : kld) worst_kld = std::max(worst_kld, v);
  return {avg_kld <= 0.05 && worst_rmae <= 0.05,
          fmt("time-averaged KLD %.4f (<= 0.05, worst t_k %.4f); max |rMAE| %.2f%% (<= 5%%)", avg_kld, worst_kld,
              100 * worst_rmae)};
}

// 6 -------------------------------------------------------------------------

bool all_finite_loss(const nlohmann::json& report) {
  for (const auto& s : report.at("steps"))
    if (!std::isfinite(s.at("final_loss").get<double>())) return false;
  return !report.at("steps").empty();
}

Outcome log_vs_plain() {
  std::ostringstream d;
  bool ok = true;
  // bistable, both formulations, desk budget
  for (const char* name : {"bistable_bsdef.json", "bistable_logbsdef.json"}) {
    ExperimentConfig cfg = ExperimentConfig::from_json(load_config(name));
    cfg.sequences = 100;
    for (auto& m : cfg.methods)
      if (m.train) m.train->max_iterations = 1000;
    const ExperimentResult r = run_experiment(cfg);
    const std::string label = cfg.methods.front().label;
    const bool trained = !r.manifest.failed_methods.count(label) && r.manifest.training.count(label) &&
                         all_finite_loss(r.manifest.training.at(label));
    ok = ok && trained;
    d << label << (trained ? " finite" : " FAILED") << "; ";
  }
  // d = 10 OU smoke: plain may diverge, log must finish with finite NLL
  ExperimentConfig cfg = ExperimentConfig::from_json(load_config("ou10_logbsdef.json"));
  cfg.sequences = 100;
  cfg.horizon = 1.0;  // smoke run on the short grid
  cfg.observations = 10;
  MethodConfig log_m = cfg.methods.front();
  log_m.train->net = {3, 128, 64};
  log_m.train->batch = 256;
  log_m.train->max_iterations = 500;
  MethodConfig plain = log_m;
  plain.name = plain.label = "bsdef";
  plain.train->method = DeepMethod::kBsdef;
  plain.force = true;
  cfg.methods = {plain, log_m};
  const ExperimentResult r = run_experiment(cfg);
  const Series s = collect(r.records);
  bool log_ok = !r.manifest.failed_methods.count(log_m.label) && s.count({log_m.label, "nll"});
  double worst = 0.0;
  if (log_ok) {
    for (double v : s.at({log_m.label, "nll"})) {
      worst = std::max(worst, v);
      log_ok = log_ok && std::isfinite(v) && v < kLogDensityClip;
    }
  }
  const bool plain_failed = r.manifest.failed_methods.count("bsdef") > 0;
  ok = ok && log_ok;
  d << "ou10 logbsdef " << (log_ok ? "finite" : "FAILED") << " (max NLL " << fmt("%.3f", worst) << "); ou10 bsdef "
    << (plain_failed ? "diverged (recorded)" : "completed");
  return {ok, d.str()};
}

// 7 -------------------------------------------------------------------------

Outcome normalization() {
  std::ostringstream d;
  bool ok = true;
  double worst = 0.0;
  // Unnormalized filter-like densities on the 1D examples; quadrature is
  // near-exact, so the combined SE is the IS SE.
  struct Case {
    Example ex;
    LogDensityFn f;
  };
  const Gaussian post(Vec::Constant(1, 0.4), Mat::Constant(1, 1, 0.35));
  std::vector<Case> cases = {
      {ou_model(1), [post](const Mat& x) { return Vec(post.log_pdf(x).array() + std::log(7.0)); }},
      {bistable_model(-1.0),
       [](const Mat& x) {
         // unequal two-mode shape
         const Vec a = (-(x.row(0).array() - 1.2).square() / 0.6).matrix().transpose();
         const Vec b = (-(x.row(0).array() + 1.2).square() / 0.6 + std::log(0.6)).matrix().transpose();
         return Vec(a.array().max(b.array()) + ((a - b).array().abs() * -1.0).exp().log1p() + 1.3);
       }},
  };
  const TimeGrid grid{1.0, 10, 64};
  const Mat obs = Mat::Zero(1, 10);
  for (auto& c : cases) {
    Normalizer::Options o;
    o.samples = 20000;
    o.moment_paths = 50000;
    o.seed = 7;
    const Normalizer quad(c.ex, grid, o);
    for (NormMethod m : {NormMethod::kIekf, NormMethod::kIg}) {
      o.method = m;
      const Normalizer is(c.ex, grid, o);
      for (int k : {1, 5, 10}) {
        Rng rng(100 + k);
        const auto q = quad.estimate(c.f, k, obs, rng);
        const auto e = is.estimate(c.f, k, obs, rng);
        const double dev = std::abs(std::exp(q.log_z) - std::exp(e.log_z)) / e.z_se;
        worst = std::max(worst, dev);
        ok = ok && dev < 3.0;
      }
    }
  }
  d << fmt("quad vs IS max %.2f SE (ou, bistable; I-EKF and I-G; k = 1, 5, 10)", worst);

  // unbiasedness at a known constant
  Rng rng(77);
  const double z_true = 2.5;
  const Gaussian target(Vec::Constant(1, 0.5), Mat::Constant(1, 1, 0.8));
  const LogDensityFn f = [&](const Mat& x) { return Vec(target.log_pdf(x).array() + std::log(z_true)); };
  const Proposal q{ProposalKind::kWideGaussian, Gaussian(Vec::Zero(1), Mat::Constant(1, 1, 3.0)), 3.0, nullptr,
                   nullptr};
  std::vector<double> z;
  for (int r = 0; r < 200; ++r) z.push_back(std::exp(is_normalize(f, q, 200, rng).log_z));
  const double mz = mean_of(z);
  double ss = 0.0;
  for (double v : z) ss += (v - mz) * (v - mz);
  const double se = std::sqrt(ss / (z.size() - 1) / z.size());
  const bool unbiased = std::abs(mz - z_true) < 3 * se;
  ok = ok && unbiased;
  d << fmt("; 200-replicate mean %.4f vs %.1f (%.2f SE)", mz, z_true, std::abs(mz - z_true) / se);
  return {ok, d.str()};
}

// 8 -------------------------------------------------------------------------

Outcome metric_oracles() {
  Rng rng(8);
  const Gaussian p(Vec::Zero(1), Mat::Identity(1, 1));
  const Gaussian q1(Vec::Ones(1), Mat::Identity(1, 1));
  const Gaussian q2(Vec::Zero(1), Mat::Constant(1, 1, 4.0));
  const Sampler sampler = [](Rng& r, int n) { return r.normal_matrix(1, n); };
  const auto lp = [&](const Mat& x) { return p.log_pdf(x); };
  const McEstimate a = kld_mc(sampler, lp, [&](const Mat& x) { return q1.log_pdf(x); }, 100, 1000, rng);
  const McEstimate b = kld_mc(sampler, lp, [&](const Mat& x) { return q2.log_pdf(x); }, 100, 1000, rng);
  const double exact_b = std::log(2.0) + 0.125 - 0.5;
  const double da = std::abs(a.value - 0.5) / a.se, db = std::abs(b.value - exact_b) / b.se;
  const double clip = nll(Vec::Constant(3, std::log(1e-300)));
  const double scott = scott_factor(100, 1);
  const bool ok = da < 3 && db < 3 && std::abs(clip - 460.517) < 1e-3 && std::abs(scott - 0.39810717055) < 1e-9;
  return {ok, fmt("KL 0.5: %.4f (%.2f SE); KL 0.3181: %.4f (%.2f SE); clip %.3f; Scott %.11f", a.value, da, b.value,
                  db, clip, scott)};
}

// 9 -------------------------------------------------------------------------

Outcome lorenz96() {
  ExperimentConfig cfg = ExperimentConfig::from_json(load_config("l96_logbsdef.json"));
  cfg.reference.kind = ReferenceSpec::Kind::kNone;
  MethodConfig pf;
  pf.name = "pf";
  pf.label = "pf1e4";
  pf.members = 10000;
  pf.substeps = 1;
  cfg.methods.resize(1);
  cfg.methods.push_back(pf);
  const ExperimentResult r = run_experiment(cfg);
  const std::string label = cfg.methods.front().label;
  if (r.manifest.failed_methods.count(label)) return {false, "training failed: " + r.manifest.failed_methods.at(label)};
  const Series s = collect(r.records);
  const auto& deep = s.at({label, "nll"});
  const auto& pfn = s.at({"pf1e4", "nll"});
  bool ok = true;
  std::ostringstream d;
  d << "NLL by t_k (logbsdef/pf):";
  for (std::size_t i = 0; i < deep.size(); ++i) {
    const double t = (i + 1) * cfg.horizon / cfg.observations;
    ok = ok && std::isfinite(deep[i]) && deep[i] < kLogDensityClip;
    if (t >= 0.5 - 1e-9) ok = ok && deep[i] < pfn[i];
    d << fmt(" %.2f/%.1f", deep[i], pfn[i]);
  }
  return {ok, d.str()};
}

// 10 ------------------------------------------------------------------------

double nn_gradient_error() {
  Rng rng(10);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Mlp<double> net(3, std::vector<int>(1 + trial % 3, 6), 2,
                    trial % 2 ? OutputActivation::kExponential : OutputActivation::kLinear);
    net.init_he(rng);
    net.params().array() += 0.1;  // away from ReLU kinks
    const Mat x = rng.normal_matrix(3, 4), w = rng.normal_matrix(2, 4);
    auto loss = [&](const Mlp<double>& m) { return (m.forward(x).array() * w.array()).sum(); };
    Mlp<double>::Tape tape;
    net.forward(x, tape);
    Vec g = Vec::Zero(net.size());
    net.backward(tape, w, &g);
    for (Eigen::Index i = 0; i < net.size(); ++i) {
      Mlp<double> up = net, dn = net;
      up.params()[i] += 1e-5;
      dn.params()[i] -= 1e-5;
      worst = std::max(worst, rel_err(g[i], (loss(up) - loss(dn)) / 2e-5, 1e-6));
    }
  }
  return worst;
}

double bsde_gradient_error() {
  const TimeGrid grid{1.0, 2, 4};
  double worst = 0.0;
  for (const Example& ex : {ou_model(2), bistable_model(-1.0)}) {
    for (DeepMethod m : {DeepMethod::kBsdef, DeepMethod::kLogBsdef}) {
      DensityFilter f(m, ex, grid, {2, 6, 5});
      Rng rng(11);
      Mlp<double> phi = f.new_phi(rng);
      std::vector<Mlp<double>> vbar;
      for (int n = 0; n < 4; ++n) vbar.push_back(f.new_vbar(rng));
      for (int l = 0; l < phi.num_layers(); ++l) phi.bias(l).array() += 0.05;
      for (auto& v : vbar)
        for (int l = 0; l < v.num_layers(); ++l) v.bias(l).array() += 0.05;
      std::vector<Mat> x(5), dw(4);
      for (auto& p : x) p = rng.normal_matrix(ex.state_dim(), 7);
      for (auto& p : dw) p = rng.normal_matrix(ex.state_dim(), 7, std::sqrt(grid.tau()));
      const Mat hist = rng.normal_matrix(ex.obs_dim(), 1);
      const Vec target = rng.normal_matrix(7, 1);
      auto loss = [&](const Mlp<double>& p, const std::vector<Mlp<double>>& v) {
        return (bsde_rollout(f, p, v, x, dw, hist).y_terminal - target).squaredNorm() / 7.0;
      };
      const BsdeGradients g = bsde_backward(f, phi, vbar, bsde_rollout(f, phi, vbar, x, dw, hist), target);
      const double e = 1e-6;
      for (Eigen::Index i = 0; i < phi.size(); ++i) {
        Mlp<double> up = phi, dn = phi;
        up.params()[i] += e;
        dn.params()[i] -= e;
        worst = std::max(worst, rel_err(g.phi[i], (loss(up, vbar) - loss(dn, vbar)) / (2 * e), 1e-6));
      }
      for (int n = 0; n < 4; ++n) {
        for (Eigen::Index i = 0; i < vbar[n].size(); ++i) {
          auto up = vbar, dn = vbar;
          up[n].params()[i] += e;
          dn[n].params()[i] -= e;
          worst = std::max(worst, rel_err(g.vbar[n][i], (loss(phi, up) - loss(phi, dn)) / (2 * e), 1e-6));
        }
      }
    }
  }
  return worst;
}

Outcome determinism_and_plumbing() {
  const auto cfg_json = nlohmann::json::parse(R"({
    "example": {"name": "bistable", "drift_sign": -1},
    "grid": {"T": 1.0, "K": 10, "N": 16}, "seed": 10,
    "evaluation": {"sequences": 50, "substeps": 32, "kld_samples": 20,
                   "reference": {"kind": "pf", "particles": 5000}},
    "methods": [{"name": "ekf"}, {"name": "enkf", "members": 500}, {"name": "pf", "members": 1000},
                {"name": "logbsdef", "train": {"width_phi": 16, "width_v": 8, "batch": 64,
                                                "max_iterations": 30, "normalization": {"count": 8, "pool": 32}}}]
  })");
  ExperimentConfig cfg = ExperimentConfig::from_json(cfg_json);
  const std::string a = format_metrics_csv(run_experiment(cfg).records);
  cfg.threads = 2;
  const std::string b = format_metrics_csv(run_experiment(cfg).records);
  const bool same = a == b;

  // forced divergence: coarse EnKF forecast on partially observed Lorenz-96
  const ExperimentConfig div = ExperimentConfig::from_json(nlohmann::json::parse(R"({
    "example": {"name": "l96", "d": 8, "d_obs": 2},
    "grid": {"T": 10.0, "K": 10, "N": 16}, "seed": 5,
    "evaluation": {"sequences": 4, "substeps": 200, "reference": {"kind": "none"}},
    "methods": [{"name": "enkf", "members": 100, "substeps": 1}, {"name": "ekf"}]
  })"));
  std::size_t events = 0;
  bool survived = true;
  try {
    const ExperimentResult r = run_experiment(div);
    events = r.manifest.event_counts.count("divergence") ? r.manifest.event_counts.at("divergence") : 0;
  } catch (const std::exception&) {
    survived = false;
  }
  const double gn = nn_gradient_error(), gb = bsde_gradient_error();
  const bool ok = same && survived && events > 0 && gn < 1e-4 && gb < 1e-3;
  return {ok, fmt("csv identical across runs/threads: %s (%zu bytes); divergence run survived with %zu events; "
                  "nn grad err %.1e (< 1e-4), bsde grad err %.1e (< 1e-3)",
                  same ? "yes" : "no", a.size(), events, gn, gb)};
}

const std::map<int, std::pair<const char*, std::function<Outcome()>>> kCriteria = {
    {1, {"Kalman oracle exactness", kalman_oracle}},
    {2, {"log transform identity", log_transform_identity}},
    {3, {"PF consistency and rate", pf_rate}},
    {4, {"EnKF linear consistency", enkf_consistency}},
    {5, {"LogBSDEF desk-scale accuracy on OU", logbsdef_ou}},
    {6, {"log vs plain stability", log_vs_plain}},
    {7, {"normalization", normalization}},
    {8, {"metric oracles", metric_oracles}},
    {9, {"Lorenz-96 desk scale", lorenz96}},
    {10, {"determinism and plumbing", determinism_and_plumbing}},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty())
    for (const auto& [n, c] : kCriteria) which.push_back(n);
  int failed = 0;
  for (int n : which) {
    const auto it = kCriteria.find(n);
    if (it == kCriteria.end()) {
      std::cerr << "unknown criterion " << n << "\n";
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << n << " (" << it->second.first << "): " << (o.pass ? "PASS" : "FAIL") << " | "
              << o.detail << " | " << fmt("%.1f s", sec) << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed;
}
