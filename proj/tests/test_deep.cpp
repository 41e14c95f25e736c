#include "doctest.h"
#include "test_util.hpp"

#include <cmath>

#include "dfw/deep_filter.hpp"

using namespace dfw;
using dfw::testing::constant_stub;
using dfw::testing::GaussianTest;
using dfw::testing::log_transform_residual;
using dfw::testing::rel_err;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

/// Scalar network with zero weights whose output is exactly c.
Mlp<double> constant_net(int in, double c, OutputActivation act = OutputActivation::kLinear, int out = 1) {
  Mlp<double> n(in, {4}, out, act);
  n.params().setZero();
  n.bias(1).setConstant(act == OutputActivation::kExponential ? std::log(c) : c);
  return n;
}

}  // namespace

TEST_SUITE("deep") {

TEST_CASE("f and f_log on ou") {
  const Example ou = ou_model(1);
  CHECK(eval_f(*ou.model, v1(2), 1.0, v1(3)) == doctest::Approx(13.0));
  CHECK(eval_f_log(*ou.model, v1(2), 0.0, v1(3)) == doctest::Approx(6.5));
  CHECK(eval_f_log(*ou.model, v1(2), 17.0, v1(3)) == eval_f_log(*ou.model, v1(2), -4.0, v1(3)));
  CHECK(eval_f(*ou.model, v1(2), 2.0, v1(6)) == 2.0 * eval_f(*ou.model, v1(2), 1.0, v1(3)));
}

TEST_CASE("f vanishes for constant coefficients") {
  const Example zero = constant_stub(Vec::Zero(2), 0.0);
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const Vec x = rng.normal_matrix(2, 1), v = rng.normal_matrix(2, 1);
    CHECK(eval_f(*zero.model, x, rng.normal(), v) == 0.0);
    CHECK(eval_f_log(*zero.model, x, rng.normal(), v) == 0.0);
  }
  // mu = c, sigma = 1: the v-term is -2 c . v only, and u drops out
  const Example drift = constant_stub(Vec::Constant(1, 0.7), 1.0);
  CHECK(eval_f(*drift.model, v1(0.3), 5.0, v1(0.0)) == 0.0);
}

TEST_CASE("f is linear and f_log ignores u on random inputs") {
  Rng rng(7);
  const SchloglSde s;
  const Example l96 = lorenz96_model(6, 3);
  for (int i = 0; i < 50; ++i) {
    const Vec x = Vec(rng.normal_matrix(6, 1).array() + 8.0);
    const Vec v1r = rng.normal_matrix(6, 1), v2r = rng.normal_matrix(6, 1);
    const double u1 = rng.normal(), u2 = rng.normal(), a = rng.normal(), b = rng.normal();
    const double lhs = eval_f(*l96.model, x, a * u1 + b * u2, a * v1r + b * v2r);
    const double rhs = a * eval_f(*l96.model, x, u1, v1r) + b * eval_f(*l96.model, x, u2, v2r);
    CHECK(std::abs(lhs - rhs) < 1e-10 * (1 + std::abs(lhs)));

    const Vec xs = v1(300 + 50 * rng.normal());
    CHECK(eval_f_log(s, xs, 1.0, v1(0.01)) == eval_f_log(s, xs, -3.0, v1(0.01)));
  }
}

TEST_CASE("log and plain prediction equations agree") {
  Rng rng(13);
  const Example ou = ou_model(1);
  const Example ou3 = ou_model(3);
  const Example bi = bistable_model();
  GaussianTest g1{v1(0.4), Mat::Constant(1, 1, 1.0 / 0.7)};
  Mat s3 = Mat::Identity(3, 3);
  s3(0, 1) = s3(1, 0) = 0.3;
  GaussianTest g3{Vec::Constant(3, -0.2), s3.inverse()};
  for (int i = 0; i < 100; ++i) {
    const Vec x = rng.normal_matrix(1, 1);
    CHECK(std::abs(log_transform_residual(*ou.model, g1, x)) < 1e-6);
    CHECK(std::abs(log_transform_residual(*bi.model, g1, x)) < 1e-6);
    CHECK(std::abs(log_transform_residual(*ou3.model, g3, rng.normal_matrix(3, 1))) < 1e-6);
  }
  // state-dependent diffusion: relative residual
  const SchloglSde s;
  GaussianTest gs{v1(300.0), Mat::Constant(1, 1, 1.0 / 2500.0)};
  for (int i = 0; i < 100; ++i) {
    const Vec x = v1(300 + 60 * rng.normal());
    const double scale = std::abs(eval_f(s, x, 1.0, Vec::Zero(1))) + std::abs(s.drift(x)(0, 0)) / 50.0 + 1.0;
    CHECK(std::abs(log_transform_residual(s, gs, x)) < 1e-6 * scale);
  }
}

TEST_CASE("g_tau") {
  const Example ou = ou_model(1);
  DensityFilter f(DeepMethod::kDsf, ou, {1.0, 1, 1}, {});
  Mlp<double> lin(1, {}, 1, OutputActivation::kLinear);
  lin.params().setZero();
  lin.weight(0)(0, 0) = 1.0;
  const Mat empty(0, 1);
  CHECK(g_tau(f, lin, Mat::Constant(1, 1, 1.0), empty, 0.1)[0] == doctest::Approx(1.3));
  CHECK(g_tau(f, lin, Mat::Constant(1, 1, 0.8), empty, 0.0)[0] == 0.8);

  const Example zero = constant_stub(Vec::Zero(1), 0.0);
  DensityFilter fz(DeepMethod::kLogDsf, zero, {1.0, 1, 1}, {});
  CHECK(g_tau(fz, constant_net(1, 2.5), Mat::Random(1, 4), empty, 0.3).isApproxToConstant(2.5));
}

TEST_CASE("ds_target cases") {
  const Example ou = ou_model(1);
  const TimeGrid grid{1.0, 3, 4};
  DensityFilter plain(DeepMethod::kDsf, ou, grid, {});
  const Mat x = Mat::Random(1, 5);
  const Mat hist0(0, 1);

  // k = 0, n = 0, plain: G^tau pi_0
  const Vec target = ds_target(plain, 0, 0, x, hist0);
  for (int i = 0; i < 5; ++i) {
    const double p = std::exp(ou.prior.log_density(x.col(i))[0]);
    const double dp = -x(0, i) * p;
    CHECK(target[i] == doctest::Approx(p + grid.tau() * eval_f(*ou.model, x.col(i), p, v1(dp))));
  }

  // k >= 1, n = 0, log: inner value phi_{k-1,N}(x) - log L(o_k, x)
  DensityFilter logf(DeepMethod::kLogDsf, ou, grid, {});
  Rng rng(2);
  logf.dsf_nets().emplace_back();
  for (int n = 0; n < grid.substeps; ++n) logf.dsf_nets()[0].push_back(logf.new_phi(rng));
  const Mat o1 = Mat::Constant(1, 1, 0.4);
  const TargetValue inner = ds_inner(logf, 1, 0, x, o1);
  const Vec expect = logf.predictor_value(0, x, hist0) - ou.observation->log_likelihood(o1, x);
  CHECK((inner.value - expect).norm() < 1e-12);

  // constant stub, constant network: target = c
  const Example zero = constant_stub(Vec::Zero(1), 0.0);
  DensityFilter fz(DeepMethod::kLogDsf, zero, grid, {});
  fz.dsf_nets().emplace_back();
  fz.dsf_nets()[0].push_back(constant_net(fz.input_dim(), 1.7));
  CHECK(ds_target(fz, 0, 1, x, hist0).isApproxToConstant(1.7));
}

TEST_CASE("ds_inner gradient matches finite differences") {
  const Example bi = bistable_model();
  const TimeGrid grid{1.0, 3, 2};
  Rng rng(4);
  for (DeepMethod m : {DeepMethod::kDsf, DeepMethod::kLogDsf}) {
    DensityFilter f(m, bi, grid, {2, 8, 4});
    f.dsf_nets().emplace_back();
    for (int n = 0; n < grid.substeps; ++n) f.dsf_nets()[0].push_back(f.new_phi(rng));
    Mat hist(1, 1);
    hist << 0.3;
    for (int k : {0, 1}) {
      const Mat h = k == 0 ? Mat(0, 1) : hist;
      const Mat x = rng.normal_matrix(1, 6);
      const TargetValue t = ds_inner(f, k, 0, x, h);
      for (int i = 0; i < 6; ++i) {
        const double e = 1e-5;
        const double up = ds_inner(f, k, 0, Mat::Constant(1, 1, x(0, i) + e), h).value[0];
        const double dn = ds_inner(f, k, 0, Mat::Constant(1, 1, x(0, i) - e), h).value[0];
        CHECK(rel_err(t.grad(0, i), (up - dn) / (2 * e), 1e-6) < 1e-4);
      }
    }
  }
}

TEST_CASE("bsde rollout stubs") {
  const Example zero = constant_stub(Vec::Zero(2), 1.0);
  const TimeGrid grid{1.0, 2, 8};
  DensityFilter f(DeepMethod::kBsdef, zero, grid, {1, 8, 4});
  Rng rng(3);
  Mlp<double> phi = f.new_phi(rng);
  std::vector<Mat> x(9), dw(8);
  for (auto& m : x) m = rng.normal_matrix(2, 5);
  for (auto& m : dw) m = rng.normal_matrix(2, 5, std::sqrt(grid.tau()));
  const Mat hist(0, 1);

  std::vector<Mlp<double>> vz(8, constant_net(f.input_dim(), 0.0, OutputActivation::kLinear, 2));
  const BsdeRollout r0 = bsde_rollout(f, phi, vz, x, dw, hist);
  const Vec y0 = phi.forward(f.make_input(x[0], hist)).row(0).transpose();
  CHECK(r0.y_terminal == y0);

  std::vector<Mlp<double>> vo(8, constant_net(f.input_dim(), 1.0, OutputActivation::kLinear, 2));
  const BsdeRollout r1 = bsde_rollout(f, phi, vo, x, dw, hist);
  Vec sum = Vec::Zero(5);
  for (const auto& d : dw) sum += d.colwise().sum().transpose();
  CHECK((r1.y_terminal - y0 - sum).cwiseAbs().maxCoeff() < 1e-12);

  // sigma = 0: Y_N = Y_0 regardless of v
  const Example still = constant_stub(Vec::Zero(2), 0.0);
  DensityFilter fs(DeepMethod::kLogBsdef, still, grid, {1, 8, 4});
  const BsdeRollout r2 = bsde_rollout(fs, phi, vz, x, dw, hist);
  CHECK((r2.y_terminal - y0).norm() == 0.0);
}

TEST_CASE("bsde rollout parameter gradients match finite differences") {
  const TimeGrid grid{1.0, 2, 4};
  for (const Example& ex : {ou_model(2), bistable_model()}) {
    for (DeepMethod m : {DeepMethod::kBsdef, DeepMethod::kLogBsdef}) {
      DensityFilter f(m, ex, grid, {2, 6, 5});
      Rng rng(9);
      Mlp<double> phi = f.new_phi(rng);
      std::vector<Mlp<double>> vbar;
      for (int n = 0; n < 4; ++n) vbar.push_back(f.new_vbar(rng));
      // He init leaves biases at zero; shift them so no ReLU sits exactly on its kink
      for (int l = 0; l < phi.num_layers(); ++l) phi.bias(l).array() += 0.05;
      for (auto& v : vbar)
        for (int l = 0; l < v.num_layers(); ++l) v.bias(l).array() += 0.05;
      const int d = ex.state_dim();
      std::vector<Mat> x(5), dw(4);
      for (auto& p : x) p = rng.normal_matrix(d, 7);
      for (auto& p : dw) p = rng.normal_matrix(d, 7, std::sqrt(grid.tau()));
      Mat hist = rng.normal_matrix(ex.obs_dim(), 1);
      const Vec target = rng.normal_matrix(7, 1);

      auto loss = [&](const Mlp<double>& p, const std::vector<Mlp<double>>& v) {
        return (bsde_rollout(f, p, v, x, dw, hist).y_terminal - target).squaredNorm() / 7.0;
      };
      const BsdeGradients g = bsde_backward(f, phi, vbar, bsde_rollout(f, phi, vbar, x, dw, hist), target);
      CHECK(g.loss == doctest::Approx(loss(phi, vbar)));
      const double e = 1e-6;
      for (Eigen::Index i = 0; i < phi.size(); i += 3) {
        Mlp<double> up = phi, dn = phi;
        up.params()[i] += e;
        dn.params()[i] -= e;
        CHECK(rel_err(g.phi[i], (loss(up, vbar) - loss(dn, vbar)) / (2 * e), 1e-6) < 1e-3);
      }
      for (int n = 0; n < 4; ++n) {
        for (Eigen::Index i = 0; i < vbar[n].size(); i += 2) {
          auto up = vbar, dn = vbar;
          up[n].params()[i] += e;
          dn[n].params()[i] -= e;
          CHECK(rel_err(g.vbar[n][i], (loss(phi, up) - loss(phi, dn)) / (2 * e), 1e-6) < 1e-3);
        }
      }
    }
  }
}

TEST_CASE("bsde terminal conditions") {
  const Example ou = ou_model(1);
  const TimeGrid grid{1.0, 3, 2};
  DensityFilter f(DeepMethod::kLogBsdef, ou, grid, {});
  Rng rng(1);
  f.phi_nets().push_back(f.new_phi(rng));
  const Mat x = rng.normal_matrix(1, 4);
  CHECK((bsde_terminal(f, 0, x, Mat(0, 1)) + ou.prior.log_density(x)).norm() < 1e-12);

  // L(o_1, x) = 1 at a point: target = phi_0(x). Needs R with log det making log L = 0 at o = x.
  Example unit = ou;
  const double r = 1.0 / (2 * M_PI);
  unit.observation = std::make_shared<LinearObservation>(Mat::Identity(1, 1), Mat::Constant(1, 1, r));
  DensityFilter fu(DeepMethod::kLogBsdef, unit, grid, {});
  fu.phi_nets().push_back(f.phi_nets()[0]);
  const Mat xp = Mat::Constant(1, 1, 0.25);
  CHECK(bsde_terminal(fu, 1, xp, xp)[0] == doctest::Approx(fu.predictor_value(0, xp, Mat(0, 1))[0]).epsilon(1e-12));

  DensityFilter fp(DeepMethod::kBsdef, ou, grid, {});
  fp.phi_nets().push_back(fp.new_phi(rng));
  CHECK((bsde_terminal(fp, 1, rng.normal_matrix(1, 50, 3.0), Mat::Constant(1, 1, 0.1)).array() > 0).all());
}

TEST_CASE("filter log-density wiring") {
  const Example ou = ou_model(1);
  const TimeGrid grid{1.0, 3, 2};
  const Mat obs = (Mat(1, 3) << 0.2, -0.1, 0.5).finished();
  const Mat x = Mat::Random(1, 6);

  DensityFilter plain(DeepMethod::kBsdef, ou, grid, {});
  DensityFilter logm(DeepMethod::kLogBsdef, ou, grid, {});
  for (int k = 0; k < 3; ++k) {
    plain.phi_nets().push_back(constant_net(plain.input_dim(), 1.0, OutputActivation::kExponential));
    logm.phi_nets().push_back(constant_net(logm.input_dim(), 0.0));
  }
  for (int k = 1; k <= 3; ++k) {
    const Vec ll = ou.observation->log_likelihood(obs.col(k - 1), x);
    CHECK((plain.log_density(k, x, obs) - ll).norm() < 1e-14);
    CHECK((logm.log_density(k, x, obs) - ll).norm() < 1e-14);
  }

  // log nets set to -log of the plain nets: identical log-densities
  Rng rng(4);
  DensityFilter p2(DeepMethod::kBsdef, ou, grid, {2, 16, 4});
  DensityFilter l2(DeepMethod::kLogBsdef, ou, grid, {2, 16, 4});
  for (int k = 0; k < 3; ++k) {
    Mlp<double> n = p2.new_phi(rng);
    p2.phi_nets().push_back(n);
    Mlp<double> neg(n.input_dim(), n.hidden(), 1, OutputActivation::kLinear);
    neg.params() = n.params();
    neg.weight(n.num_layers() - 1) *= -1.0;
    neg.bias(n.num_layers() - 1) *= -1.0;
    l2.phi_nets().push_back(neg);
  }
  for (int k = 1; k <= 3; ++k) CHECK((p2.log_density(k, x, obs) - l2.log_density(k, x, obs)).norm() < 1e-9);
  CHECK_THROWS_AS(DensityFilter(DeepMethod::kBsdef, ou, grid, {}).log_density(1, x, obs), std::out_of_range);
}

TEST_CASE("input padding") {
  const Example l = lorenz96_model(4, 4);
  DensityFilter f(DeepMethod::kLogDsf, l, {1.0, 5, 2}, {});
  CHECK(f.input_dim() == 4 + 4 * 4);
  const Mat x = Mat::Random(4, 3);
  const Mat hist = Mat::Random(8, 1);
  const Mat in = f.make_input(x, hist);
  CHECK(in.topRows(4) == x);
  CHECK(in.middleRows(4, 8).col(2) == hist.col(0));
  CHECK(in.bottomRows(8).isZero(0.0));
}

TEST_CASE("checkpoint round trip") {
  const Example ou = ou_model(1);
  DensityFilter f(DeepMethod::kLogBsdef, ou, {1.0, 2, 3}, {2, 8, 4});
  Rng rng(1);
  for (int k = 0; k < 2; ++k) {
    f.phi_nets().push_back(f.new_phi(rng));
    f.vbar_nets().emplace_back();
    for (int n = 0; n < 3; ++n) f.vbar_nets().back().push_back(f.new_vbar(rng));
  }
  const auto dir = std::filesystem::temp_directory_path() / "dfw_test_ckpt";
  std::filesystem::remove_all(dir);
  f.save(dir, {{"note", "x"}});
  const DensityFilter g = DensityFilter::load(dir);
  CHECK(g.method() == DeepMethod::kLogBsdef);
  CHECK(g.trained_steps() == 2);
  const Mat obs = (Mat(1, 2) << 0.1, 0.2).finished();
  const Mat x = Mat::Random(1, 5);
  CHECK(g.log_density(2, x, obs) == f.log_density(2, x, obs));
  std::filesystem::remove_all(dir);
}

TEST_CASE("log z cache") {
  DensityFilter f(DeepMethod::kLogDsf, ou_model(1), {1.0, 2, 1}, {});
  CHECK_FALSE(f.cached_log_z(3, 1).has_value());
  f.cache_log_z(3, 1, 0.25);
  CHECK(*f.cached_log_z(3, 1) == 0.25);
  f.invalidate();
  CHECK_FALSE(f.cached_log_z(3, 1).has_value());
}

}
