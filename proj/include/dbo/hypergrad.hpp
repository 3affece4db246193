#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

#include "dbo/linalg.hpp"
#include "dbo/problem.hpp"
#include "dbo/rng.hpp"

namespace dbo {

struct Regime {
  bool stochastic = false;
  bool homogeneous = false;
  friend bool operator==(const Regime&, const Regime&) = default;
};

enum class Branch { Aid, Neumann, JhipDeterministic, JhipStochastic };

Branch branch_for(Regime regime) noexcept;
std::string_view to_string(Branch b) noexcept;

struct HypergradEstimate {
  Vec value;
  Vec cg_solution;  // v^N of the AID branch, reused as the next warm start
  std::size_t m_prime = 0;
  std::size_t samples_drawn = 0;
};

/// grad_x f - J v^N with v^N the n_cg-step CG iterate for H v = grad_y f from v0.
HypergradEstimate estimate_aid(const AgentOracles& agent, const Vec& x, const Vec& y, std::size_t n_cg,
                               const Vec& v0);

struct NeumannOptions {
  std::size_t m_cap = 10;  // M
  double epsilon = 0.01;
  double l_bound = 1.0;  // L; epsilon must be below 1/L
  std::size_t batch = 1;
  std::optional<std::size_t> forced_m_prime;  // fixes M' (tests and noiseless comparisons)
};

/// Randomized truncated Neumann series: M' ~ U{0, ..., M-1} and
/// grad_x f(phi0) - J(phi1) eps M prod_{n=1}^{M'} (I - eps H(phi_{n+1})) grad_y f(phi0).
HypergradEstimate estimate_neumann(const AgentOracles& agent, const Vec& x, const Vec& y, const NeumannOptions& opt,
                                   Rng& rng);

/// eps sum_{k<M} (I - eps H)^k, the expectation of the randomized Hessian-inverse estimate.
Mat neumann_expected_inverse(const Mat& h, double epsilon, std::size_t m_cap);

/// Expectation of estimate_neumann over all randomness on a noiseless agent.
Vec neumann_expected_estimate(const AgentOracles& agent, const Vec& x, const Vec& y, double epsilon,
                              std::size_t m_cap);

/// grad_x f - Z' grad_y f; full-batch gradients when `sample` is null.
HypergradEstimate estimate_jhip(const AgentOracles& agent, const Vec& x, const Vec& y, const Mat& z,
                                const Sample* sample = nullptr);

struct EstimateInputs {
  const AgentOracles* agent = nullptr;
  const Vec* x = nullptr;
  const Vec* y = nullptr;
  std::size_t n_cg = 10;
  const Vec* v0 = nullptr;  // AID warm start; zero when null
  NeumannOptions neumann;
  Rng* rng = nullptr;     // stochastic branches
  const Mat* z = nullptr;  // JHIP result for heterogeneous branches
};

/// Routes to the branch selected by the regime. Throws MissingInput when an input
/// the branch needs is absent.
HypergradEstimate estimate(Regime regime, const EstimateInputs& in);

/// Closed-form constants of the analysis, used for presets and error-bound tests.
struct ConstantsLedger {
  double mu = 1, L = 1, l_f0 = 1, l_g2 = 0;
  double kappa = 1;
  double l_phi = 0;      // Lipschitz constant of the hypergradient
  double l_f = 0;        // Lipschitz constant of the local surrogate
  double gamma_big = 0;  // AID error constant
  double d1 = 0, d2 = 0;
  double eta_y = 0;
  std::size_t T = 1, N = 1, M = 1;
  double epsilon = 0;

  double delta_y(std::size_t t) const;
  double delta_kappa(std::size_t n) const;
  /// L_f0 kappa (1 - eps L)^M
  double neumann_bias(std::size_t m, double eps) const;
  /// L_f0 kappa (1 - eps mu)^M, valid for any Hessian spectrum in [mu, L]
  double neumann_bias_general(std::size_t m, double eps) const;
};

ConstantsLedger constants(const SmoothnessMeta& meta, double eta_y, std::size_t T, std::size_t N, std::size_t M,
                          double epsilon);

/// Smallest N with delta_kappa^N < 1/(8 kappa).
std::size_t smallest_n_for_kappa(double kappa);
/// max(ceil(2 log kappa), smallest N meeting delta_kappa^N < 1/(8 kappa)).
std::size_t preset_N(double kappa);
/// max(ceil(2 log kappa), smallest T meeting delta_y^T < 1/3) for the given eta_y.
std::size_t preset_T(const SmoothnessMeta& meta, double eta_y);

}  // namespace dbo
