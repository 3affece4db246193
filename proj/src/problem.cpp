#include "dbo/problem.hpp"

#include <cmath>
#include <functional>

#include "dbo/error.hpp"
#include "dbo/numerics.hpp"

namespace dbo {

void SmoothnessMeta::validate() const {
  require(mu > 0.0 && std::isfinite(mu), ErrorKind::BadParameter, "meta: mu must be positive");
  require(L() >= mu, ErrorKind::BadParameter, "meta: L = max(l_f1, l_g1) must be >= mu");
  require(l_f0 >= 0.0 && l_g2 >= 0.0, ErrorKind::BadParameter, "meta: Lipschitz constants must be >= 0");
  require(sigma_f >= 0.0 && sigma_g1 >= 0.0 && sigma_g2 >= 0.0, ErrorKind::BadParameter,
          "meta: noise levels must be >= 0");
}

const Sample& Sample::full_batch() {
  static const Sample s{};
  return s;
}

void BilevelProblem::validate() const {
  require(n >= 1, ErrorKind::BadParameter, "problem: needs at least one agent");
  require(agents.size() == n, ErrorKind::DimMismatch, "problem: agent count differs from n");
  for (std::size_t i = 0; i < n; ++i) {
    require(agents[i] != nullptr, ErrorKind::MissingInput, "problem: null agent " + std::to_string(i));
    require(agents[i]->p() == p && agents[i]->q() == q, ErrorKind::DimMismatch,
            "problem: agent " + std::to_string(i) + " has inconsistent dimensions");
  }
  meta.validate();
}

namespace {

struct LowerModel {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> grad;
  std::function<Mat(const Vec&)> hess;
};

std::size_t newton_cap(double kappa, double tol) {
  const double logs = std::max(1.0, std::log(1.0 / tol));
  return static_cast<std::size_t>(10.0 * std::ceil(std::max(1.0, kappa) * logs));
}

Vec damped_newton(const LowerModel& m, Vec y, double tol, std::size_t cap, const char* who) {
  require(tol > 0.0, ErrorKind::BadParameter, std::string(who) + ": tol must be positive");
  // tol is relative to the gradient scale at the origin so far-out iterates stay solvable
  tol *= std::max(1.0, norm(m.grad(Vec(y.size()))));
  Vec grad = m.grad(y);
  double gnorm = norm(grad);
  for (std::size_t it = 0; it < cap; ++it) {
    if (gnorm <= tol) return y;
    const Vec step = spd_solve(m.hess(y), grad);
    const double f0 = m.value(y);
    const double slope = dot(grad, step);
    double s = 1.0;
    bool accepted = false;
    Vec trial;
    Vec trial_grad;
    for (int halvings = 0; halvings < 60; ++halvings, s *= 0.5) {
      trial = y;
      trial.axpy(-s, step);
      trial_grad = m.grad(trial);
      const double tg = norm(trial_grad);
      // near the optimum objective differences drown in rounding, so a drop in the
      // gradient norm also counts as progress
      if (m.value(trial) <= f0 - 1e-4 * s * slope || tg < (1.0 - 1e-4 * s) * gnorm) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    y = std::move(trial);
    grad = std::move(trial_grad);
    gnorm = norm(grad);
  }
  if (gnorm <= tol) return y;
  fail(ErrorKind::NoConvergence,
       std::string(who) + ": gradient norm " + std::to_string(gnorm) + " above tol " + std::to_string(tol));
}

LowerModel averaged_model(const BilevelProblem& prob, std::span<const Vec> xs) {
  LowerModel m;
  m.value = [&prob, xs](const Vec& y) {
    double v = 0.0;
    for (std::size_t i = 0; i < prob.n; ++i) v += prob.agent(i).g(xs[i], y);
    return v / static_cast<double>(prob.n);
  };
  m.grad = [&prob, xs](const Vec& y) { return mean_grad_y_g(prob, xs, y); };
  m.hess = [&prob, xs](const Vec& y) { return mean_hess_yy_g(prob, xs, y); };
  return m;
}

}  // namespace

Mat mean_hess_yy_g(const BilevelProblem& prob, std::span<const Vec> xs, const Vec& y) {
  Mat h(prob.q, prob.q);
  for (std::size_t i = 0; i < prob.n; ++i) h += prob.agent(i).hess_yy_g(xs[i], y);
  h *= 1.0 / static_cast<double>(prob.n);
  return h;
}

Mat mean_jac_xy_g(const BilevelProblem& prob, std::span<const Vec> xs, const Vec& y) {
  Mat j(prob.p, prob.q);
  for (std::size_t i = 0; i < prob.n; ++i) j += prob.agent(i).jac_xy_g(xs[i], y);
  j *= 1.0 / static_cast<double>(prob.n);
  return j;
}

Vec mean_grad_y_g(const BilevelProblem& prob, std::span<const Vec> xs, const Vec& y) {
  Vec g(prob.q);
  for (std::size_t i = 0; i < prob.n; ++i) g += prob.agent(i).grad_y_g(xs[i], y);
  g *= 1.0 / static_cast<double>(prob.n);
  return g;
}

Vec lower_level_solve(const BilevelProblem& prob, std::span<const Vec> xs, double tol, const Vec* y0) {
  require(xs.size() == prob.n, ErrorKind::DimMismatch, "lower_level_solve: need one x per agent");
  require(y0 == nullptr || y0->size() == prob.q, ErrorKind::DimMismatch, "lower_level_solve: y0 has wrong size");
  return damped_newton(averaged_model(prob, xs), y0 != nullptr ? *y0 : Vec(prob.q), tol, newton_cap(prob.meta.kappa(), tol),
                       "lower_level_solve");
}

Vec lower_level_solve_exact(const BilevelProblem& prob, const Vec& x, double tol, const Vec* y0) {
  require(x.size() == prob.p, ErrorKind::DimMismatch, "lower_level_solve_exact: x has wrong dimension");
  const std::vector<Vec> xs(prob.n, x);
  return lower_level_solve(prob, xs, tol, y0);
}

Vec local_lower_level_solve(const BilevelProblem& prob, std::size_t i, const Vec& x, double tol) {
  const AgentOracles& a = prob.agent(i);
  LowerModel m;
  m.value = [&a, &x](const Vec& y) { return a.g(x, y); };
  m.grad = [&a, &x](const Vec& y) { return a.grad_y_g(x, y); };
  m.hess = [&a, &x](const Vec& y) { return a.hess_yy_g(x, y); };
  return damped_newton(m, Vec(prob.q), tol, newton_cap(prob.meta.kappa(), tol), "local_lower_level_solve");
}

double upper_objective(const BilevelProblem& prob, const Vec& x, double tol) {
  const Vec y = lower_level_solve_exact(prob, x, tol);
  double v = 0.0;
  for (std::size_t i = 0; i < prob.n; ++i) v += prob.agent(i).f(x, y);
  return v / static_cast<double>(prob.n);
}

HypergradientOracle exact_hypergradient(const BilevelProblem& prob, const Vec& x, double tol, const Vec* y0) {
  HypergradientOracle out;
  out.y_star = lower_level_solve_exact(prob, x, tol, y0);
  const std::vector<Vec> xs(prob.n, x);
  // Z solves (mean H) Z = (mean J)^T, so the correction term is Z^T grad_y f_i
  const Mat z = spd_solve(mean_hess_yy_g(prob, xs, out.y_star), mean_jac_xy_g(prob, xs, out.y_star).transpose());
  out.mean = Vec(prob.p);
  for (std::size_t i = 0; i < prob.n; ++i) {
    const AgentOracles& a = prob.agent(i);
    Vec g = a.grad_x_f(x, out.y_star) - matvec_t(z, a.grad_y_f(x, out.y_star));
    out.mean.axpy(1.0 / static_cast<double>(prob.n), g);
    out.per_agent.push_back(std::move(g));
  }
  return out;
}

Vec local_surrogate_hypergradient(const BilevelProblem& prob, std::size_t i, const Vec& x, const Vec& y) {
  const AgentOracles& a = prob.agent(i);
  const Vec v = spd_solve(a.hess_yy_g(x, y), a.grad_y_f(x, y));
  return a.grad_x_f(x, y) - matvec(a.jac_xy_g(x, y), v);
}

}  // namespace dbo
