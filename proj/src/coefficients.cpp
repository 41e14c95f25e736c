#include "dfw/coefficients.hpp"

namespace dfw {

FpCoefficient::Terms FpCoefficient::terms(const Mat& x) const {
  return {x, model_->drift(x), model_->grad_div_a(x), model_->lap_a(x), model_->div_drift(x)};
}

Vec FpCoefficient::f(const Terms& t, const Vec& u, const Mat& v) const {
  const Vec lin = (t.grad_div_a - 2.0 * t.mu).cwiseProduct(v).colwise().sum().transpose();
  return lin + df_du(t).cwiseProduct(u);
}

Vec FpCoefficient::f_log(const Terms& t, const Mat& w) const {
  // f(x,1,-w) = -(div a - 2 mu).w + lap_a/2 - div mu
  const Vec quad = model_->sigma_t_norm2(t.x, w);
  const Vec lin = (t.grad_div_a - 2.0 * t.mu).cwiseProduct(w).colwise().sum().transpose();
  return -0.5 * quad + lin - df_du(t);
}

Vec FpCoefficient::df_du(const Terms& t) const { return 0.5 * t.lap_a - t.div_mu; }

Mat FpCoefficient::df_dv(const Terms& t) const { return t.grad_div_a - 2.0 * t.mu; }

Mat FpCoefficient::df_log_dw(const Terms& t, const Mat& w) const {
  return df_dv(t) - model_->cov_times(t.x, w);
}

double eval_f(const SdeModel& model, const Vec& x, double u, const Vec& v) {
  const FpCoefficient c(std::shared_ptr<const SdeModel>(&model, [](const SdeModel*) {}));
  return c.f(Mat(x), Vec::Constant(1, u), Mat(v))[0];
}

double eval_f_log(const SdeModel& model, const Vec& x, double u, const Vec& w) {
  const FpCoefficient c(std::shared_ptr<const SdeModel>(&model, [](const SdeModel*) {}));
  return c.f_log(Mat(x), Vec::Constant(1, u), Mat(w))[0];
}

}  // namespace dfw
