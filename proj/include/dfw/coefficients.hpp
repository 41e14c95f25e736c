#pragma once

#include <memory>

#include "dfw/models.hpp"

namespace dfw {

/// The first-order terms of the Fokker-Planck operator written through the
/// generator, A* p = A p + f(x, p, grad p):
///   f(x,u,v)     = sum_j (div a)_j v_j + (1/2) lap_a u - div(mu) u - 2 mu.v
///   f_log(x,u,w) = -(1/2)|sigma^T w|^2 - f(x, 1, -w)
/// All batch methods take one point per column.
class FpCoefficient {
 public:
  /// Coefficient values at a batch of points, reused across calls.
  struct Terms {
    Mat x;
    Mat mu;
    Mat grad_div_a;
    Vec lap_a;
    Vec div_mu;
  };

  explicit FpCoefficient(std::shared_ptr<const SdeModel> model) : model_(std::move(model)) {}

  const SdeModel& model() const { return *model_; }
  Terms terms(const Mat& x) const;

  Vec f(const Terms& t, const Vec& u, const Mat& v) const;
  Vec f(const Mat& x, const Vec& u, const Mat& v) const { return f(terms(x), u, v); }
  /// f_log does not depend on u; the argument exists to mirror f.
  Vec f_log(const Terms& t, const Mat& w) const;
  Vec f_log(const Mat& x, const Vec& /*u*/, const Mat& w) const { return f_log(terms(x), w); }

  /// df/du = lap_a / 2 - div(mu)
  Vec df_du(const Terms& t) const;
  /// df/dv = div a - 2 mu
  Mat df_dv(const Terms& t) const;
  /// d f_log / dw = -a w + div a - 2 mu
  Mat df_log_dw(const Terms& t, const Mat& w) const;

 private:
  std::shared_ptr<const SdeModel> model_;
};

double eval_f(const SdeModel& model, const Vec& x, double u, const Vec& v);
double eval_f_log(const SdeModel& model, const Vec& x, double u, const Vec& w);

}  // namespace dfw
