#include "doctest.h"
#include "test_util.hpp"

#include <cmath>

#include "dfw/normalize.hpp"

using namespace dfw;

namespace {

LogDensityFn scaled_gaussian(double scale, double mean = 0.0, double var = 1.0) {
  const Gaussian g(Vec::Constant(1, mean), Mat::Constant(1, 1, var));
  return [g, scale](const Mat& x) { return Vec(g.log_pdf(x).array() + std::log(scale)); };
}

Proposal gaussian_proposal(double mean, double var) {
  return {ProposalKind::kWideGaussian, Gaussian(Vec::Constant(1, mean), Mat::Constant(1, 1, var)), 1.0, nullptr,
          nullptr};
}

}  // namespace

TEST_SUITE("normalize") {

TEST_CASE("quadrature") {
  CHECK(std::abs(quad_normalize([](double x) { return -0.5 * x * x - 0.5 * std::log(2 * M_PI); }, -10, 10, 10000) -
                 1.0) < 1e-4);
  CHECK(std::abs(quad_normalize([](double x) { return std::log(2.0) - 0.5 * x * x - 0.5 * std::log(2 * M_PI); }, -10,
                                10, 10000) -
                 2.0) < 2e-4);
  CHECK(quad_normalize([](double) { return std::log(3.5); }, 0, 1, 17) == doctest::Approx(3.5).epsilon(1e-14));
  // overflow safety: a log-density far above exp range still normalizes in the log domain
  const QuadResult q = quad_log_normalize(scaled_gaussian(1.0, 1.5, 0.25), -10, 10, 4000);
  CHECK(std::abs(q.log_z) < 1e-8);
  CHECK(q.mean == doctest::Approx(1.5).epsilon(1e-8));
  CHECK(q.var == doctest::Approx(0.25).epsilon(1e-4));
  const QuadResult big = quad_log_normalize([](const Mat& x) { return Vec(Vec::Constant(x.cols(), 1000.0)); }, 0, 2, 10);
  CHECK(big.log_z == doctest::Approx(1000.0 + std::log(2.0)));
  CHECK_THROWS_AS(quad_normalize([](double) { return 1000.0; }, 0, 1, 10), NumericalDivergence);
}

TEST_CASE("importance sampling identities") {
  Rng rng(1);
  const Proposal q = gaussian_proposal(0.3, 1.7);
  const LogDensityFn same = [&](const Mat& x) { return q.q.log_pdf(x); };
  const IsResult r1 = is_normalize(same, q, 500, rng);
  CHECK(std::abs(r1.log_z) < 1e-12);
  CHECK(r1.z_se < 1e-6);
  CHECK(r1.ess == doctest::Approx(500.0));
  const LogDensityFn triple = [&](const Mat& x) { return Vec(q.q.log_pdf(x).array() + std::log(3.0)); };
  CHECK(std::exp(is_normalize(triple, q, 50, rng).log_z) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("importance sampling accuracy and symmetry") {
  Rng rng(2);
  const IsResult r = is_normalize(scaled_gaussian(1.0), gaussian_proposal(0, 4), 100000, rng);
  CHECK(std::abs(std::exp(r.log_z) - 1.0) < 0.02);
  CHECK(std::abs(r.mean[0]) < 3 * 1.0 / std::sqrt(r.ess));
  const IsResult r2 = is_normalize(scaled_gaussian(2.0), gaussian_proposal(0, 4), 100000, rng);
  CHECK(std::abs(std::exp(r2.log_z) - 2.0) < 0.04);
}

TEST_CASE("low ESS and proposal mismatch") {
  Rng rng(3);
  EventLog log;
  is_normalize(scaled_gaussian(1.0, 6.0, 0.01), gaussian_proposal(0, 1), 200, rng, &log);
  CHECK(log.count("low_ess") == 1);
  const LogDensityFn dead = [](const Mat& x) { return Vec(Vec::Constant(x.cols(), -INFINITY)); };
  CHECK_THROWS_AS(is_normalize(dead, gaussian_proposal(0, 1), 10, rng, &log), NumericalDivergence);
  CHECK(log.count("proposal_mismatch") == 1);
}

TEST_CASE("unbiasedness over independent replicates") {
  Rng rng(4);
  const auto target = scaled_gaussian(2.5, 0.5, 0.8);
  const Proposal q = gaussian_proposal(0.0, 3.0);
  std::vector<double> z;
  for (int r = 0; r < 200; ++r) z.push_back(std::exp(is_normalize(target, q, 200, rng).log_z));
  double m = 0, s = 0;
  for (double v : z) m += v;
  m /= z.size();
  for (double v : z) s += (v - m) * (v - m);
  const double se = std::sqrt(s / (z.size() - 1) / z.size());
  CHECK(std::abs(m - 2.5) < 3 * se);
}

TEST_CASE("ekf proposal") {
  const Example ou = ou_model(1);
  const TimeGrid grid{1.0, 5, 128};
  Rng rng(5);
  const Mat obs = rng.normal_matrix(1, 5);
  GaussianBelief kf = GaussianBelief::from(ou.prior);
  for (int k = 1; k <= 3; ++k) kf = kf_step(kf, ou, grid.interval(), 128, obs.col(k - 1));
  const Proposal p1 = build_ekf_proposal(ou, obs, grid, 3, 1.0);
  CHECK((p1.q.mean() - kf.mean).norm() < 1e-10);
  CHECK((p1.q.cov() - kf.cov).norm() < 1e-10);
  const Proposal p4 = build_ekf_proposal(ou, obs, grid, 3, 4.0);
  CHECK((p4.q.cov() - 4.0 * p1.q.cov()).norm() < 1e-14);
  CHECK(p4.kind == ProposalKind::kEkfBased);

  // forced failure: an indefinite posterior falls back to the wide proposal
  GaussianBelief broken{Vec::Zero(1), Mat::Constant(1, 1, -1.0)};
  CHECK_THROWS_AS(build_ekf_proposal(broken, 2.0), NumericalDivergence);
  const auto moments = std::make_shared<UnconditionalMoments>(ou, grid, 1000, Rng(1));
  WideProposalCache cache(moments, 3.0, 100, 7);
  EventLog log;
  Example diverging = bistable_model();
  diverging.prior = InitialDistribution::normal(Vec::Constant(1, 1e80), Mat::Identity(1, 1));
  const Proposal fb = build_ekf_proposal(diverging, obs, grid, 2, 2.0, &cache, &log);
  CHECK(fb.kind == ProposalKind::kWideGaussian);
  CHECK(log.count("proposal_fallback") == 1);
}

TEST_CASE("wide proposal: unconditional moments and sample reuse") {
  const Example ou = ou_model(1);
  const TimeGrid grid{1.0, 4, 32};
  const auto moments = std::make_shared<UnconditionalMoments>(ou, grid, 100000, Rng(2));
  for (int k = 0; k <= 4; ++k) {
    const Moments& m = moments->at(k);
    CHECK(std::abs(m.mean[0]) < 3 * std::sqrt(m.cov(0, 0) / 100000));
  }
  WideProposalCache cache(moments, 3.0, 64, 9);
  const Proposal a = cache.get(2), b = cache.get(2);
  CHECK(*a.samples == *b.samples);
  CHECK(a.q.cov()(0, 0) == doctest::Approx(3.0 * moments->at(2).cov(0, 0)));
  const Proposal w6 = build_wide_proposal(*moments, 2, 6.0);
  CHECK(w6.q.cov()(0, 0) == doctest::Approx(6.0 * moments->at(2).cov(0, 0)));
  CHECK_THROWS_AS(build_wide_proposal(*moments, 2, 0.5), std::invalid_argument);
}

TEST_CASE("quadrature and importance sampling agree on 1D targets") {
  Rng rng(6);
  // unnormalized posterior-like shapes
  const std::vector<std::pair<LogDensityFn, Proposal>> cases = {
      {scaled_gaussian(0.37, 0.8, 0.3), gaussian_proposal(0.5, 1.0)},
      {[](const Mat& x) { return Vec(-0.4 * (x.array().square() - 2.0).square() + 1.0); }, gaussian_proposal(0, 3)},
  };
  for (const auto& [f, q] : cases) {
    const QuadResult quad = quad_log_normalize(f, -12, 12, 20000);
    const IsResult is = is_normalize(f, q, 20000, rng);
    CHECK(std::abs(std::exp(quad.log_z) - std::exp(is.log_z)) < 3 * is.z_se);
  }
}

TEST_CASE("normalizer front end") {
  const Example ou = ou_model(1);
  const TimeGrid grid{1.0, 3, 64};
  Normalizer::Options o;
  o.samples = 2000;
  o.moment_paths = 20000;
  const Normalizer quad(ou, grid, o);
  o.method = NormMethod::kIekf;
  const Normalizer iekf(ou, grid, o);
  o.method = NormMethod::kIg;
  const Normalizer ig(ou, grid, o);
  CHECK(iekf.options().inflation == 2.0);
  CHECK(ig.options().inflation == 3.0);
  const Mat obs = (Mat(1, 3) << 0.3, -0.2, 0.9).finished();
  const auto f = scaled_gaussian(5.0, 0.2, 0.4);
  Rng rng(1);
  const auto a = quad.estimate(f, 2, obs, rng);
  const auto b = iekf.estimate(f, 2, obs, rng);
  const auto c = ig.estimate(f, 2, obs, rng);
  CHECK(std::exp(a.log_z) == doctest::Approx(5.0).epsilon(1e-6));
  CHECK(std::abs(std::exp(b.log_z) - 5.0) < 3 * b.z_se + 1e-12);
  CHECK(std::abs(std::exp(c.log_z) - 5.0) < 3 * c.z_se + 1e-12);
  CHECK(a.mean[0] == doctest::Approx(0.2).epsilon(1e-6));
  CHECK_THROWS_AS(Normalizer(ou_model(2), grid, Normalizer::Options{}), std::invalid_argument);
}

}
