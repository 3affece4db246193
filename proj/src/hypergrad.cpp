#include "dbo/hypergrad.hpp"

#include <cmath>
#include <random>
#include <string>

#include "dbo/error.hpp"
#include "dbo/numerics.hpp"

namespace dbo {

Branch branch_for(Regime regime) noexcept {
  if (regime.homogeneous) return regime.stochastic ? Branch::Neumann : Branch::Aid;
  return regime.stochastic ? Branch::JhipStochastic : Branch::JhipDeterministic;
}

std::string_view to_string(Branch b) noexcept {
  switch (b) {
    case Branch::Aid: return "aid";
    case Branch::Neumann: return "neumann";
    case Branch::JhipDeterministic: return "jhip";
    case Branch::JhipStochastic: return "jhip-stochastic";
  }
  return "unknown";
}

HypergradEstimate estimate_aid(const AgentOracles& agent, const Vec& x, const Vec& y, std::size_t n_cg,
                               const Vec& v0) {
  require(n_cg >= 1, ErrorKind::BadParameter, "estimate_aid: n_cg must be >= 1");
  const Vec rhs = agent.grad_y_f(x, y);
  const LinearOperator hvp = [&](const Vec& v) { return agent.hess_yy_g_vp(x, y, v); };
  HypergradEstimate out;
  out.cg_solution = conjugate_gradient(hvp, rhs, n_cg, v0);
  out.value = agent.grad_x_f(x, y) - matvec(agent.jac_xy_g(x, y), out.cg_solution);
  return out;
}

HypergradEstimate estimate_neumann(const AgentOracles& agent, const Vec& x, const Vec& y, const NeumannOptions& opt,
                                   Rng& rng) {
  require(opt.m_cap >= 1, ErrorKind::BadParameter, "estimate_neumann: M must be >= 1");
  require(opt.l_bound > 0.0, ErrorKind::BadParameter, "estimate_neumann: L must be > 0");
  require(opt.epsilon > 0.0 && opt.epsilon < 1.0 / opt.l_bound, ErrorKind::BadParameter,
          "estimate_neumann: epsilon must lie in (0, 1/L)");
  HypergradEstimate out;
  if (opt.forced_m_prime) {
    out.m_prime = *opt.forced_m_prime;
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, opt.m_cap - 1);
    out.m_prime = pick(rng);
  }
  const Sample phi0 = agent.draw_upper(rng, opt.batch);
  const Sample phi1 = agent.draw_lower(rng, opt.batch);
  std::vector<Sample> phis;
  phis.reserve(out.m_prime);
  for (std::size_t n = 0; n < out.m_prime; ++n) phis.push_back(agent.draw_lower(rng, opt.batch));
  out.samples_drawn = out.m_prime + 2;

  Vec u = agent.grad_y_f(x, y, phi0);
  // right-to-left: the factor with n = M' touches the vector first
  for (std::size_t n = out.m_prime; n-- > 0;) u.axpy(-opt.epsilon, agent.hess_yy_g_vp(x, y, u, phis[n]));
  u *= opt.epsilon * static_cast<double>(opt.m_cap);
  out.value = agent.grad_x_f(x, y, phi0) - matvec(agent.jac_xy_g(x, y, phi1), u);
  return out;
}

Mat neumann_expected_inverse(const Mat& h, double epsilon, std::size_t m_cap) {
  const std::size_t q = h.rows();
  Mat term = Mat::identity(q);
  Mat sum(q, q);
  const Mat step = Mat::identity(q) - epsilon * h;
  for (std::size_t k = 0; k < m_cap; ++k) {
    sum += term;
    term = matmul(step, term);
  }
  return epsilon * sum;
}

Vec neumann_expected_estimate(const AgentOracles& agent, const Vec& x, const Vec& y, double epsilon,
                              std::size_t m_cap) {
  const Mat hinv = neumann_expected_inverse(agent.hess_yy_g(x, y), epsilon, m_cap);
  return agent.grad_x_f(x, y) - matvec(agent.jac_xy_g(x, y), matvec(hinv, agent.grad_y_f(x, y)));
}

HypergradEstimate estimate_jhip(const AgentOracles& agent, const Vec& x, const Vec& y, const Mat& z,
                                const Sample* sample) {
  require(z.rows() == agent.q() && z.cols() == agent.p(), ErrorKind::DimMismatch, "estimate_jhip: Z must be q x p");
  const Sample& s = sample != nullptr ? *sample : Sample::full_batch();
  HypergradEstimate out;
  out.value = agent.grad_x_f(x, y, s) - matvec_t(z, agent.grad_y_f(x, y, s));
  out.samples_drawn = sample != nullptr ? 1 : 0;
  return out;
}

HypergradEstimate estimate(Regime regime, const EstimateInputs& in) {
  require(in.agent != nullptr && in.x != nullptr && in.y != nullptr, ErrorKind::MissingInput,
          "estimate: agent, x and y are required");
  const AgentOracles& a = *in.agent;
  switch (branch_for(regime)) {
    case Branch::Aid:
      return estimate_aid(a, *in.x, *in.y, in.n_cg, in.v0 != nullptr ? *in.v0 : Vec(a.q()));
    case Branch::Neumann:
      require(in.rng != nullptr, ErrorKind::MissingInput, "estimate: the Neumann branch needs a random stream");
      return estimate_neumann(a, *in.x, *in.y, in.neumann, *in.rng);
    case Branch::JhipDeterministic:
      require(in.z != nullptr, ErrorKind::MissingInput, "estimate: heterogeneous regime needs the JHIP result");
      return estimate_jhip(a, *in.x, *in.y, *in.z);
    case Branch::JhipStochastic: {
      require(in.z != nullptr, ErrorKind::MissingInput, "estimate: heterogeneous regime needs the JHIP result");
      require(in.rng != nullptr, ErrorKind::MissingInput, "estimate: stochastic JHIP needs a random stream");
      const Sample s = a.draw_upper(*in.rng, in.neumann.batch);
      return estimate_jhip(a, *in.x, *in.y, *in.z, &s);
    }
  }
  fail(ErrorKind::BadParameter, "estimate: unknown branch");
}

double ConstantsLedger::delta_y(std::size_t t) const {
  return std::pow(1.0 - 2.0 * eta_y * mu * L / (mu + L), static_cast<double>(t));
}

double ConstantsLedger::delta_kappa(std::size_t n) const {
  const double s = std::sqrt(kappa);
  return std::pow((s - 1.0) / (s + 1.0), 2.0 * static_cast<double>(n));
}

double ConstantsLedger::neumann_bias(std::size_t m, double eps) const {
  return l_f0 * kappa * std::pow(1.0 - eps * L, static_cast<double>(m));
}

double ConstantsLedger::neumann_bias_general(std::size_t m, double eps) const {
  return l_f0 * kappa * std::pow(1.0 - eps * mu, static_cast<double>(m));
}

ConstantsLedger constants(const SmoothnessMeta& meta, double eta_y, std::size_t T, std::size_t N, std::size_t M,
                          double epsilon) {
  meta.validate();
  ConstantsLedger c;
  c.mu = meta.mu;
  c.L = meta.L();
  c.l_f0 = meta.l_f0;
  c.l_g2 = meta.l_g2;
  c.kappa = c.L / c.mu;
  c.eta_y = eta_y;
  c.T = T;
  c.N = N;
  c.M = M;
  c.epsilon = epsilon;
  require(T >= 1 && N >= 1 && M >= 1, ErrorKind::BadParameter, "constants: T, N, M must be >= 1");
  const double contraction = 1.0 - 2.0 * eta_y * c.mu * c.L / (c.mu + c.L);
  require(eta_y > 0.0 && contraction >= 0.0 && contraction < 1.0, ErrorKind::BadParameter,
          "constants: eta_y must lie in (0, (mu + L) / (2 mu L)]");
  require(epsilon >= 0.0, ErrorKind::BadParameter, "constants: epsilon must be >= 0");

  const double L = c.L, mu = c.mu, lf0 = c.l_f0, lg2 = c.l_g2, k = c.kappa;
  const double L2 = L * L, L3 = L2 * L;
  c.l_phi = L + (2 * L2 + lg2 * lf0 * lf0) / mu + (L * lf0 * lg2 + L3 + lg2 * lf0 * L) / (mu * mu) +
            lg2 * L2 * lf0 / (mu * mu * mu);
  c.l_f = L + L2 / mu + lf0 * (lg2 / mu + lg2 * L / (mu * mu));
  const double rk = 1.0 + std::sqrt(k);
  const double inner = k + lg2 * lf0 / (mu * mu);
  c.gamma_big = 3 * L2 + 3 * lg2 * lg2 * lf0 / (mu * mu) + 6 * L2 * rk * rk * inner * inner;
  c.d1 = 4 * rk * rk * inner * inner;
  const double d2_inner = k * k + 2 * lf0 * k / mu + 2 * lf0 * k * k / mu;
  c.d2 = d2_inner * d2_inner;
  return c;
}

std::size_t smallest_n_for_kappa(double kappa) {
  require(kappa >= 1.0, ErrorKind::BadParameter, "kappa must be >= 1");
  if (kappa == 1.0) return 1;
  const double s = std::sqrt(kappa);
  auto n = static_cast<std::size_t>(std::ceil(std::log(8.0 * kappa) / (2.0 * std::log((s + 1.0) / (s - 1.0)))));
  while (std::pow((s - 1.0) / (s + 1.0), 2.0 * static_cast<double>(n)) >= 1.0 / (8.0 * kappa)) ++n;
  return std::max<std::size_t>(n, 1);
}

std::size_t preset_N(double kappa) {
  const auto base = static_cast<std::size_t>(std::ceil(2.0 * std::log(std::max(kappa, 1.0))));
  return std::max<std::size_t>({1, base, smallest_n_for_kappa(kappa)});
}

std::size_t preset_T(const SmoothnessMeta& meta, double eta_y) {
  const ConstantsLedger c = constants(meta, eta_y, 1, 1, 1, 0.0);
  std::size_t t = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(2.0 * std::log(std::max(c.kappa, 1.0)))));
  while (c.delta_y(t) >= 1.0 / 3.0) ++t;
  return t;
}

}  // namespace dbo
