#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dbo/linalg.hpp"
#include "dbo/rng.hpp"

namespace dbo {

/// Smoothness and noise constants of the problem class. The generators fill
/// them with conservative analytic bounds; only orders of magnitude matter for
/// the stepsize presets built on top.
struct SmoothnessMeta {
  double mu = 1.0;    // strong convexity of g_i in y
  double l_f0 = 1.0;  // Lipschitz constant of f_i
  double l_f1 = 1.0;  // ... of grad f_i
  double l_g1 = 1.0;  // ... of grad g_i
  double l_g2 = 0.0;  // ... of the Hessian of g_i
  double sigma_f = 0.0;
  double sigma_g1 = 0.0;
  double sigma_g2 = 0.0;
  bool homogeneous_g = false;

  double L() const noexcept { return l_f1 > l_g1 ? l_f1 : l_g1; }
  double kappa() const noexcept { return L() / mu; }
  /// Throws BadParameter on mu <= 0, L < mu or negative noise levels.
  void validate() const;
};

/// One draw from an agent's local sampling distribution. `full` selects the
/// deterministic (full batch) oracle; otherwise `indices` picks a minibatch of an
/// empirical dataset or `noise_seed` seeds a parametric noise model.
struct Sample {
  bool full = true;
  std::vector<std::size_t> indices;
  std::uint64_t noise_seed = 0;
  std::size_t batch = 1;

  static const Sample& full_batch();
};

struct NamedDataset {
  std::string name;
  const Mat* features = nullptr;  // rows = samples
  const Vec* labels = nullptr;
};

/// First- and second-order oracles of one agent's pair (f_i, g_i). Every oracle
/// takes a Sample; Sample::full_batch() gives the exact local derivative and a
/// drawn sample gives an unbiased stochastic estimate of it.
class AgentOracles {
 public:
  virtual ~AgentOracles() = default;

  virtual std::size_t p() const = 0;
  virtual std::size_t q() const = 0;

  virtual double f(const Vec& x, const Vec& y, const Sample& s) const = 0;
  virtual double g(const Vec& x, const Vec& y, const Sample& s) const = 0;
  virtual Vec grad_x_f(const Vec& x, const Vec& y, const Sample& s) const = 0;
  virtual Vec grad_y_f(const Vec& x, const Vec& y, const Sample& s) const = 0;
  virtual Vec grad_y_g(const Vec& x, const Vec& y, const Sample& s) const = 0;
  virtual Vec hess_yy_g_vp(const Vec& x, const Vec& y, const Vec& v, const Sample& s) const = 0;
  /// Mixed second derivative, p x q.
  virtual Mat jac_xy_g(const Vec& x, const Vec& y, const Sample& s) const = 0;
  /// q x q.
  virtual Mat hess_yy_g(const Vec& x, const Vec& y, const Sample& s) const = 0;

  /// Minibatch draw for the upper-level oracles (f).
  virtual Sample draw_upper(Rng& rng, std::size_t batch) const = 0;
  /// Minibatch draw for the lower-level oracles (g).
  virtual Sample draw_lower(Rng& rng, std::size_t batch) const = 0;

  virtual std::vector<NamedDataset> datasets() const { return {}; }

  // Deterministic shorthands.
  double f(const Vec& x, const Vec& y) const { return f(x, y, Sample::full_batch()); }
  double g(const Vec& x, const Vec& y) const { return g(x, y, Sample::full_batch()); }
  Vec grad_x_f(const Vec& x, const Vec& y) const { return grad_x_f(x, y, Sample::full_batch()); }
  Vec grad_y_f(const Vec& x, const Vec& y) const { return grad_y_f(x, y, Sample::full_batch()); }
  Vec grad_y_g(const Vec& x, const Vec& y) const { return grad_y_g(x, y, Sample::full_batch()); }
  Vec hess_yy_g_vp(const Vec& x, const Vec& y, const Vec& v) const {
    return hess_yy_g_vp(x, y, v, Sample::full_batch());
  }
  Mat jac_xy_g(const Vec& x, const Vec& y) const { return jac_xy_g(x, y, Sample::full_batch()); }
  Mat hess_yy_g(const Vec& x, const Vec& y) const { return hess_yy_g(x, y, Sample::full_batch()); }
};

struct BilevelProblem {
  std::string name;
  std::size_t n = 0;
  std::size_t p = 0;
  std::size_t q = 0;
  std::vector<std::shared_ptr<const AgentOracles>> agents;
  SmoothnessMeta meta;

  const AgentOracles& agent(std::size_t i) const { return *agents[i]; }
  /// Checks agent count, per-agent dimensions and the metadata invariants.
  void validate() const;
};

/// argmin_y (1/n) sum_i g_i(x_i, y) for per-agent upper variables, by damped Newton
/// until the averaged gradient norm is <= tol * max(1, gradient norm at y = 0), starting from y0 (zero when null).
Vec lower_level_solve(const BilevelProblem& prob, std::span<const Vec> xs, double tol, const Vec* y0 = nullptr);
/// y*(x) for a common upper variable.
Vec lower_level_solve_exact(const BilevelProblem& prob, const Vec& x, double tol, const Vec* y0 = nullptr);
/// argmin_y g_i(x, y), the agent's local lower-level solution.
Vec local_lower_level_solve(const BilevelProblem& prob, std::size_t i, const Vec& x, double tol);

/// Upper objective Phi(x) = (1/n) sum_i f_i(x, y*(x)).
double upper_objective(const BilevelProblem& prob, const Vec& x, double tol);

struct HypergradientOracle {
  std::vector<Vec> per_agent;  // grad Phi_i(x)
  Vec mean;                    // grad Phi(x)
  Vec y_star;
};

/// Exact per-agent hypergradients through the global Hessian and Jacobian of g.
HypergradientOracle exact_hypergradient(const BilevelProblem& prob, const Vec& x, double tol,
                                       const Vec* y0 = nullptr);

/// Local surrogate of agent i at (x, y): its own Hessian and Jacobian in place of
/// the network averages.
Vec local_surrogate_hypergradient(const BilevelProblem& prob, std::size_t i, const Vec& x, const Vec& y);

/// (1/n) sum of the full-batch Hessians / Jacobians at per-agent points.
Mat mean_hess_yy_g(const BilevelProblem& prob, std::span<const Vec> xs, const Vec& y);
Mat mean_jac_xy_g(const BilevelProblem& prob, std::span<const Vec> xs, const Vec& y);
Vec mean_grad_y_g(const BilevelProblem& prob, std::span<const Vec> xs, const Vec& y);

}  // namespace dbo
