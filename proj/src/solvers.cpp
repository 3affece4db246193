#include "dbo/solvers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include "dbo/error.hpp"
#include "dbo/jhip.hpp"
#include "dbo/numerics.hpp"

namespace dbo {
namespace {

constexpr double kDivergence = 1e12;

Vec mean_of(std::span<const Vec> vs) {
  Vec m(vs.front().size());
  for (const Vec& v : vs) m += v;
  m *= 1.0 / static_cast<double>(vs.size());
  return m;
}

void guard(std::span<const Vec> vs, const char* what, std::size_t k) {
  for (std::size_t i = 0; i < vs.size(); ++i) {
    const double nv = norm(vs[i]);
    if (!(nv <= kDivergence)) {
      fail(ErrorKind::Divergence, std::string(what) + " of agent " + std::to_string(i) + " reached norm " +
                                      std::to_string(nv) + " at outer iteration " + std::to_string(k));
    }
  }
}

void validation(bool ok, const std::string& msg) { require(ok, ErrorKind::ValidationError, msg); }

}  // namespace

std::string_view to_string(Algorithm a) noexcept {
  switch (a) {
    case Algorithm::Dbo: return "dbo";
    case Algorithm::Dbogt: return "dbogt";
    case Algorithm::Dsbo: return "dsbo";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view s) {
  std::string low(s);
  std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
  if (low == "dbo") return Algorithm::Dbo;
  if (low == "dbogt") return Algorithm::Dbogt;
  if (low == "dsbo") return Algorithm::Dsbo;
  fail(ErrorKind::ValidationError, "unknown algorithm '" + std::string(s) + "' (expected dbo, dbogt or dsbo)");
}

void RunConfig::validate(const BilevelProblem& prob) const {
  validation(K >= 1 && T >= 1 && N >= 1 && M >= 1, "K, T, N and M must be >= 1");
  validation(eta_x.base > 0 && eta_x.tau >= 0, "eta_x must be > 0");
  validation(eta_y.base > 0 && eta_y.tau >= 0, "eta_y must be > 0");
  validation(!gamma || (gamma->base > 0 && gamma->tau >= 0), "gamma must be > 0");
  validation(minibatch >= 1, "minibatch must be >= 1");
  validation(workers >= 1, "workers must be >= 1");
  validation(oracle_tol > 0, "oracle_tol must be > 0");
  if (algorithm == Algorithm::Dsbo) {
    validation(regime.stochastic, "dsbo requires the stochastic regime");
  } else {
    validation(!regime.stochastic, std::string(to_string(algorithm)) + " requires the deterministic regime");
  }
  validation(!regime.homogeneous || prob.meta.homogeneous_g,
             "homogeneous regime requires identical lower-level problems across agents");
  if (branch_for(regime) == Branch::Neumann) {
    validation(epsilon > 0 && epsilon < 1.0 / prob.meta.L(), "epsilon >= 1/L (need 0 < epsilon < 1/L)");
  }
}

InnerMode inner_mode_for(Algorithm a, Regime r) noexcept {
  if (r.homogeneous) return InnerMode::LocalGradient;
  return a == Algorithm::Dsbo ? InnerMode::MixedStochastic : InnerMode::Tracking;
}

InnerLoopResult inner_loop(const BilevelProblem& prob, const WeightMatrix& w, std::span<const Vec> x,
                           std::vector<Vec> y_start, InnerMode mode, std::size_t T, const StepSchedule& eta_y,
                           const InnerSampling* sampling, std::span<const Vec> v_start, std::span<const Vec> g_start,
                           ThreadPool* pool) {
  const std::size_t n = prob.n;
  require(x.size() == n && y_start.size() == n, ErrorKind::DimMismatch, "inner_loop: need one x and y per agent");
  require(w.n() == n, ErrorKind::DimMismatch, "inner_loop: network size differs from agent count");
  require(T >= 1, ErrorKind::BadParameter, "inner_loop: T must be >= 1");
  eta_y.validate("inner_loop");
  const bool persisted = !v_start.empty();
  require(!persisted || (v_start.size() == n && g_start.size() == n), ErrorKind::DimMismatch,
          "inner_loop: persisted tracker needs v and g per agent");

  auto grad = [&](std::size_t i, std::size_t t, const Vec& yi) {
    const AgentOracles& a = prob.agent(i);
    if (sampling == nullptr) return a.grad_y_g(x[i], yi);
    Rng rng = sampling->plan.stream(i, StreamRole::InnerSample, sampling->k, t);
    return a.grad_y_g(x[i], yi, a.draw_lower(rng, sampling->batch));
  };
  auto check = [&](const std::vector<Vec>& ys, std::size_t t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double nv = norm(ys[i]);
      if (!(nv <= kDivergence)) {
        fail(ErrorKind::Divergence, "inner iterate of agent " + std::to_string(i) + " reached norm " +
                                        std::to_string(nv) + " at inner step " + std::to_string(t));
      }
    }
  };

  InnerLoopResult out;
  std::vector<Vec> y = std::move(y_start);
  switch (mode) {
    case InnerMode::LocalGradient:
      for (std::size_t t = 0; t < T; ++t) {
        const double step = eta_y.at(t);
        for_each_index(pool, n, [&](std::size_t i) { y[i].axpy(-step, grad(i, t, y[i])); });
        check(y, t);
      }
      break;
    case InnerMode::MixedStochastic:
      for (std::size_t t = 0; t < T; ++t) {
        const double step = eta_y.at(t);
        std::vector<Vec> next = mix(w, y);
        for_each_index(pool, n, [&](std::size_t i) { next[i].axpy(-step, grad(i, t, y[i])); });
        y = std::move(next);
        check(y, t);
      }
      break;
    case InnerMode::Tracking: {
      std::vector<Vec> g(n);
      for_each_index(pool, n, [&](std::size_t i) { g[i] = grad(i, 0, y[i]); });
      std::vector<Vec> v;
      if (persisted) {
        v = mix(w, v_start);
        for (std::size_t i = 0; i < n; ++i) {
          v[i] += g[i];
          v[i] -= g_start[i];
        }
      } else {
        v = g;
      }
      auto track = [&] {
        out.max_tracking_residual =
            std::max(out.max_tracking_residual, norm(mean_of(v) - mean_of(g)));
      };
      track();
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<Vec> next = mix(w, y);
        const double step = eta_y.at(t);
        for (std::size_t i = 0; i < n; ++i) next[i].axpy(-step, v[i]);
        y = std::move(next);
        check(y, t);
        if (t + 1 == T) break;
        std::vector<Vec> g_next(n);
        for_each_index(pool, n, [&](std::size_t i) { g_next[i] = grad(i, t + 1, y[i]); });
        std::vector<Vec> v_next = mix(w, v);
        for (std::size_t i = 0; i < n; ++i) {
          v_next[i] += g_next[i];
          v_next[i] -= g[i];
        }
        v = std::move(v_next);
        g = std::move(g_next);
        track();
      }
      out.v = std::move(v);
      out.g_last = std::move(g);
      break;
    }
  }
  out.y = std::move(y);
  return out;
}

namespace {

struct EstimateBatch {
  std::vector<Vec> values;
  std::vector<Vec> cg_start;  // AID warm starts actually used
  double jhip_tracking = 0.0;
};

class Runner {
 public:
  Runner(const BilevelProblem& prob, const WeightMatrix& w, const RunConfig& cfg)
      : prob_(prob), w_(w), cfg_(cfg), plan_(cfg.seed), branch_(branch_for(cfg.regime)) {
    prob.validate();
    cfg.validate(prob);
    require(w.n() == prob.n, ErrorKind::ValidationError,
            "network has " + std::to_string(w.n()) + " agents but the problem has " + std::to_string(prob.n));
    if (cfg.workers > 1) pool_ = std::make_unique<ThreadPool>(cfg.workers);
    states_.resize(prob.n);
    for (auto& s : states_) {
      s.x = Vec(prob.p);
      s.y = Vec(prob.q);
      s.cg_warm = Vec(prob.q);
      s.z_warm = Mat(prob.q, prob.p);
    }
    metrics_.algorithm = cfg.algorithm;
    metrics_.kappa = prob.meta.kappa();
  }

  RunMetrics run() {
    const std::size_t n = prob_.n;
    const InnerMode mode = inner_mode_for(cfg_.algorithm, cfg_.regime);
    std::vector<Vec> prev_estimates;
    for (std::size_t k = 0; k < cfg_.K; ++k) {
      const std::vector<Vec> xs = collect(&AgentState::x);

      std::vector<Vec> ys = collect(&AgentState::y);
      InnerSampling sampling{plan_, k, cfg_.minibatch};
      const bool persist = cfg_.persist_inner_tracker && mode == InnerMode::Tracking && k > 0;
      std::vector<Vec> vs, gs;
      if (persist) {
        vs = collect(&AgentState::v_inner);
        gs = collect(&AgentState::g_inner);
      }
      InnerLoopResult inner = inner_loop(prob_, w_, xs, std::move(ys), mode, cfg_.T, cfg_.eta_y,
                                         cfg_.regime.stochastic ? &sampling : nullptr, vs, gs, pool_.get());
      metrics_.max_inner_tracking = std::max(metrics_.max_inner_tracking, inner.max_tracking_residual);
      for (std::size_t i = 0; i < n; ++i) {
        states_[i].y = std::move(inner.y[i]);
        if (mode == InnerMode::Tracking) {
          states_[i].v_inner = std::move(inner.v[i]);
          states_[i].g_inner = std::move(inner.g_last[i]);
        }
      }
      guard(collect(&AgentState::y), "inner variable", k);

      EstimateBatch est = estimates(k);
      metrics_.max_jhip_tracking = std::max(metrics_.max_jhip_tracking, est.jhip_tracking);

      IterationRecord row = record(k, xs, true, est);

      std::vector<Vec> direction;
      if (cfg_.algorithm == Algorithm::Dbogt) {
        if (k == 0) {
          direction = est.values;
        } else {
          direction = mix(w_, collect(&AgentState::u_outer));
          for (std::size_t i = 0; i < n; ++i) {
            direction[i] += est.values[i];
            direction[i] -= prev_estimates[i];
          }
        }
        const double drift = norm(mean_of(direction) - mean_of(est.values));
        row.tracker_drift = drift;
        metrics_.max_outer_tracking = std::max(metrics_.max_outer_tracking, drift);
        for (std::size_t i = 0; i < n; ++i) states_[i].u_outer = direction[i];
      } else {
        direction = est.values;
      }
      metrics_.rows.push_back(row);

      const double step = cfg_.eta_x.at(k);
      std::vector<Vec> x_next = mix(w_, xs);
      for (std::size_t i = 0; i < n; ++i) x_next[i].axpy(-step, direction[i]);
      guard(x_next, "upper variable", k + 1);

      const Vec xbar = mean_of(xs);
      Vec expected = xbar;
      expected.axpy(-step, mean_of(direction));
      metrics_.max_average_identity =
          std::max(metrics_.max_average_identity, norm(mean_of(x_next) - expected) / (1.0 + norm(xbar)));

      for (std::size_t i = 0; i < n; ++i) {
        e_acc_ += squared_norm(x_next[i] - xs[i]);
        states_[i].x = std::move(x_next[i]);
        states_[i].estimate = est.values[i];
      }
      prev_estimates = std::move(est.values);
    }
    const std::vector<Vec> xs = collect(&AgentState::x);
    metrics_.rows.push_back(record(cfg_.K, xs, false, EstimateBatch{}));
    metrics_.x_final = xs;
    metrics_.x_bar_final = mean_of(xs);
    return std::move(metrics_);
  }

 private:
  std::vector<Vec> collect(Vec AgentState::*field) const {
    std::vector<Vec> out;
    out.reserve(states_.size());
    for (const auto& s : states_) out.push_back(s.*field);
    return out;
  }

  EstimateBatch estimates(std::size_t k) {
    const std::size_t n = prob_.n;
    EstimateBatch out;
    out.values.resize(n);
    switch (branch_) {
      case Branch::Aid: {
        out.cg_start.resize(n);
        for_each_index(pool_.get(), n, [&](std::size_t i) {
          AgentState& s = states_[i];
          out.cg_start[i] = cfg_.warm_start_cg ? s.cg_warm : Vec(prob_.q);
          HypergradEstimate e = estimate_aid(prob_.agent(i), s.x, s.y, cfg_.N, out.cg_start[i]);
          s.cg_warm = std::move(e.cg_solution);
          out.values[i] = std::move(e.value);
        });
        break;
      }
      case Branch::Neumann: {
        NeumannOptions opt;
        opt.m_cap = cfg_.M;
        opt.epsilon = cfg_.epsilon;
        opt.l_bound = prob_.meta.L();
        opt.batch = cfg_.minibatch;
        opt.forced_m_prime = cfg_.neumann_fixed_m_prime;
        for_each_index(pool_.get(), n, [&](std::size_t i) {
          Rng rng = plan_.stream(i, StreamRole::Neumann, k);
          out.values[i] = estimate_neumann(prob_.agent(i), states_[i].x, states_[i].y, opt, rng).value;
        });
        break;
      }
      case Branch::JhipDeterministic:
      case Branch::JhipStochastic: {
        const bool stochastic = branch_ == Branch::JhipStochastic;
        std::vector<Mat> z0(n);
        for (std::size_t i = 0; i < n; ++i) z0[i] = cfg_.warm_start_jhip ? states_[i].z_warm : Mat(prob_.q, prob_.p);
        const StepSchedule gamma = cfg_.gamma ? *cfg_.gamma : default_jhip_schedule(prob_.meta.l_g1, stochastic, &w_);
        JhipMode mode = stochastic ? stochastic_mode(k) : deterministic_mode();
        JhipObserver observer;
        if (!stochastic && cfg_.record_oracle_metrics) {
          observer = [&](const JhipState& st) {
            out.jhip_tracking = std::max(out.jhip_tracking, jhip_tracking_residual(st, mode));
          };
        }
        JhipState st = jhip_run_state(mode, w_, cfg_.N, gamma, std::move(z0), pool_.get(), observer);
        for_each_index(pool_.get(), n, [&](std::size_t i) {
          AgentState& s = states_[i];
          if (stochastic) {
            Rng rng = plan_.stream(i, StreamRole::OuterUpper, k);
            const Sample phi = prob_.agent(i).draw_upper(rng, cfg_.minibatch);
            out.values[i] = estimate_jhip(prob_.agent(i), s.x, s.y, st.z[i], &phi).value;
          } else {
            out.values[i] = estimate_jhip(prob_.agent(i), s.x, s.y, st.z[i]).value;
          }
          s.z_warm = std::move(st.z[i]);
        });
        break;
      }
    }
    return out;
  }

  JhipMode deterministic_mode() {
    const std::size_t n = prob_.n;
    std::vector<Mat> h(n), j(n);
    for_each_index(pool_.get(), n, [&](std::size_t i) {
      h[i] = prob_.agent(i).hess_yy_g(states_[i].x, states_[i].y);
      j[i] = prob_.agent(i).jac_xy_g(states_[i].x, states_[i].y);
    });
    return JhipMode::deterministic(std::move(h), std::move(j));
  }

  JhipMode stochastic_mode(std::size_t k) {
    const BilevelProblem* prob = &prob_;
    const RngPlan plan = plan_;
    const std::size_t batch = cfg_.minibatch;
    std::vector<Vec> xs = collect(&AgentState::x);
    std::vector<Vec> ys = collect(&AgentState::y);
    return JhipMode::stochastic(prob_.n, prob_.p, prob_.q, [=](std::size_t i, std::size_t t) {
      Rng rng = plan.stream(i, StreamRole::Jhip, k, t);
      const AgentOracles& a = prob->agent(i);
      const Sample s = a.draw_lower(rng, batch);
      return JhipSample{a.hess_yy_g(xs[i], ys[i], s), a.jac_xy_g(xs[i], ys[i], s)};
    });
  }

  IterationRecord record(std::size_t k, const std::vector<Vec>& xs, bool have_inner, const EstimateBatch& est) {
    const std::size_t n = prob_.n;
    IterationRecord row;
    row.k = k;
    const Vec xbar = mean_of(xs);
    double q2 = 0.0;
    for (const Vec& x : xs) q2 += squared_norm(x - xbar);
    row.consensus = std::sqrt(q2);
    s_acc_ += q2;
    row.S_K = s_acc_;
    row.E_K = e_acc_;
    if (!cfg_.record_oracle_metrics) return row;

    const double tol = cfg_.oracle_tol;
    const HypergradientOracle hg = exact_hypergradient(prob_, xbar, tol, y_star_warm_.empty() ? nullptr : &y_star_warm_);
    y_star_warm_ = hg.y_star;
    const double gn = norm(hg.mean);
    row.grad_norm_mean = gn;
    t_acc_ += gn * gn;
    row.T_K = t_acc_;
    const Vec y_tilde = lower_level_solve(prob_, xs, tol, &hg.y_star);
    const double gap = norm(y_tilde - hg.y_star);
    row.consensus_gap = gap;
    metrics_.max_consensus_gap_excess = std::max(metrics_.max_consensus_gap_excess, gap - metrics_.kappa * row.consensus);
    if (have_inner) {
      double r = 0.0;
      for (std::size_t i = 0; i < n; ++i) r += norm(states_[i].y - y_tilde);
      row.inner_residual = r / static_cast<double>(n);
    }
    if (cfg_.record_lemma_accumulators && have_inner) {
      std::vector<double> a_terms(n, 0.0), b_terms(n, 0.0);
      for_each_index(pool_.get(), n, [&](std::size_t i) {
        const AgentState& s = states_[i];
        a_terms[i] = squared_norm(s.y - local_lower_level_solve(prob_, i, s.x, tol));
        if (branch_ == Branch::Aid) {
          const AgentOracles& a = prob_.agent(i);
          const Vec vstar = spd_solve(a.hess_yy_g(s.x, s.y), a.grad_y_f(s.x, s.y));
          b_terms[i] = squared_norm(vstar - est.cg_start[i]);
        }
      });
      for (std::size_t i = 0; i < n; ++i) {
        a_acc_ += a_terms[i];
        b_acc_ += b_terms[i];
      }
      row.A_K = a_acc_;
      if (branch_ == Branch::Aid) row.B_K = b_acc_;
    }
    return row;
  }

  const BilevelProblem& prob_;
  const WeightMatrix& w_;
  const RunConfig& cfg_;
  RngPlan plan_;
  Branch branch_;
  std::unique_ptr<ThreadPool> pool_;
  std::vector<AgentState> states_;
  RunMetrics metrics_;
  Vec y_star_warm_;
  double s_acc_ = 0.0, e_acc_ = 0.0, t_acc_ = 0.0, a_acc_ = 0.0, b_acc_ = 0.0;
};

RunMetrics run_checked(const BilevelProblem& prob, const WeightMatrix& w, const RunConfig& config, Algorithm expected) {
  require(config.algorithm == expected, ErrorKind::ValidationError,
          std::string(to_string(expected)) + "_run called with algorithm " + std::string(to_string(config.algorithm)));
  return Runner(prob, w, config).run();
}

}  // namespace

RunMetrics dbo_run(const BilevelProblem& prob, const WeightMatrix& w, const RunConfig& config) {
  return run_checked(prob, w, config, Algorithm::Dbo);
}

RunMetrics dbogt_run(const BilevelProblem& prob, const WeightMatrix& w, const RunConfig& config) {
  return run_checked(prob, w, config, Algorithm::Dbogt);
}

RunMetrics dsbo_run(const BilevelProblem& prob, const WeightMatrix& w, const RunConfig& config) {
  return run_checked(prob, w, config, Algorithm::Dsbo);
}

RunMetrics run(const BilevelProblem& prob, const WeightMatrix& w, const RunConfig& config) {
  switch (config.algorithm) {
    case Algorithm::Dbo: return dbo_run(prob, w, config);
    case Algorithm::Dbogt: return dbogt_run(prob, w, config);
    case Algorithm::Dsbo: return dsbo_run(prob, w, config);
  }
  fail(ErrorKind::ValidationError, "unknown algorithm");
}

namespace {

RunConfig preset_base(const BilevelProblem& prob, const WeightMatrix& w, Algorithm a, bool stochastic,
                      std::size_t K) {
  const SmoothnessMeta& m = prob.meta;
  RunConfig c;
  c.algorithm = a;
  c.regime = {stochastic, m.homogeneous_g};
  c.K = K;
  if (m.homogeneous_g) {
    c.eta_y = StepSchedule::constant(1.0 / m.L());
  } else {
    c.eta_y = StepSchedule::diminishing(std::min(2.0 / (m.mu + m.L()), tracking_step_factor(w) / m.L()), 10.0);
  }
  c.T = preset_T(m, c.eta_y.base);
  c.N = preset_N(m.kappa());
  c.epsilon = 0.5 / m.L();
  return c;
}

}  // namespace

RunConfig theorem1_preset(const BilevelProblem& prob, const WeightMatrix& w, std::size_t K, double scale) {
  RunConfig c = preset_base(prob, w, Algorithm::Dbo, false, K);
  const double kappa = prob.meta.kappa();
  c.eta_x = StepSchedule::constant(scale * std::cbrt(1.0 / (static_cast<double>(K) * prob.n)) *
                                   std::pow(kappa, -8.0 / 3.0));
  return c;
}

RunConfig theorem2_preset(const BilevelProblem& prob, const WeightMatrix& w, std::size_t K, double scale) {
  RunConfig c = preset_base(prob, w, Algorithm::Dbogt, false, K);
  c.eta_x = StepSchedule::constant(scale / prob.meta.L());
  return c;
}

RunConfig theorem3_preset(const BilevelProblem& prob, const WeightMatrix& w, std::size_t K, double scale) {
  RunConfig c = preset_base(prob, w, Algorithm::Dsbo, true, K);
  const double rk = std::sqrt(static_cast<double>(K));
  c.eta_x = StepSchedule::constant(scale / rk);
  c.eta_y = StepSchedule::constant(std::min(scale / rk, c.eta_y.base));
  const auto logk = static_cast<std::size_t>(std::ceil(std::log(static_cast<double>(std::max<std::size_t>(K, 2)))));
  if (!prob.meta.homogeneous_g) c.T = static_cast<std::size_t>(std::ceil(rk));
  c.N = std::max<std::size_t>(1, logk);
  c.M = std::max<std::size_t>(1, logk);
  return c;
}

void write_metrics_csv(const RunMetrics& m, std::ostream& out) {
  out << "k,grad_norm_mean,consensus,inner_residual,tracker_drift,S_K,E_K,T_K\n";
  std::ostringstream line;
  line << std::setprecision(17);
  auto opt = [&](const std::optional<double>& v) {
    if (v) line << *v;
  };
  for (const IterationRecord& r : m.rows) {
    line.str("");
    line << r.k << ',';
    opt(r.grad_norm_mean);
    line << ',' << r.consensus << ',';
    opt(r.inner_residual);
    line << ',';
    opt(r.tracker_drift);
    line << ',' << r.S_K << ',' << r.E_K << ',';
    opt(r.T_K);
    out << line.str() << '\n';
  }
}

void write_metrics_csv(const RunMetrics& m, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::IoError, "cannot write " + path);
  write_metrics_csv(m, out);
  require(out.good(), ErrorKind::IoError, "write failed for " + path);
}

}  // namespace dbo
