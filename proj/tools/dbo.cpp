#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dbo/config.hpp"
#include "dbo/error.hpp"
#include "dbo/experiment.hpp"
#include "dbo/hypergrad.hpp"
#include "dbo/jhip.hpp"
#include "dbo/problem.hpp"
#include "dbo/problems.hpp"
#include "dbo/rng.hpp"

namespace {

using namespace dbo;

struct Overrides {
  std::string preset;
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::string> algorithm;
  std::optional<std::size_t> K, T, N, M, repeats, workers;
  std::optional<double> eta_x, eta_y, gamma, epsilon;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Overrides& o, const std::string& default_preset) {
  o.preset = default_preset;
  cmd->add_option("--preset", o.preset, "embedded preset name")->capture_default_str();
  cmd->add_option("--config", o.config, "key = value config file applied on top of the preset");
  cmd->add_option("--set", o.sets, "extra key=value override (repeatable)");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--workers", o.workers, "worker threads per run");
}

void add_run_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--algorithm", o.algorithm, "dbo, dbogt or dsbo (default: the preset list)");
  cmd->add_option("--K", o.K, "outer iterations");
  cmd->add_option("--T", o.T, "inner iterations");
  cmd->add_option("--N", o.N, "CG or JHIP steps");
  cmd->add_option("--M", o.M, "Neumann truncation");
  cmd->add_option("--eta-x", o.eta_x, "outer step size");
  cmd->add_option("--eta-y", o.eta_y, "inner step size");
  cmd->add_option("--gamma", o.gamma, "JHIP step size");
  cmd->add_option("--epsilon", o.epsilon, "Neumann step");
  cmd->add_option("--repeats", o.repeats, "repeats per algorithm (default 1, or 5 for dsbo)");
}

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

ExperimentConfig build_config(const Overrides& o) {
  std::string text = "preset = " + o.preset + "\n";
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    require(in.good(), ErrorKind::IoError, "cannot read config " + o.config);
    std::ostringstream body;
    body << in.rdbuf();
    text += body.str();
  }
  ExperimentConfig cfg = parse_config_text(text, o.config.empty() ? "<preset>" : o.config);
  auto set = [&](const char* key, const std::string& value) { apply_config_value(cfg, key, value); };
  for (const std::string& kv : o.sets) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos, ErrorKind::ParseError, "--set expects key=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq);
    key.erase(0, key.find_first_not_of(' '));
    key.erase(key.find_last_not_of(' ') + 1);
    apply_config_value(cfg, key, kv.substr(eq + 1));
  }
  if (o.algorithm) set("algorithms", *o.algorithm);
  if (o.K) set("K", std::to_string(*o.K));
  if (o.T) set("T", std::to_string(*o.T));
  if (o.N) set("N", std::to_string(*o.N));
  if (o.M) set("M", std::to_string(*o.M));
  if (o.eta_x) set("eta_x", num(*o.eta_x));
  if (o.eta_y) set("eta_y", num(*o.eta_y));
  if (o.gamma) set("gamma", num(*o.gamma));
  if (o.epsilon) set("epsilon", num(*o.epsilon));
  if (o.seed) set("seed", std::to_string(*o.seed));
  if (o.repeats) set("repeats", std::to_string(*o.repeats));
  if (o.workers) set("workers", std::to_string(*o.workers));
  validate_config(cfg);
  return cfg;
}

int cmd_run(const Overrides& o, const std::string& out) {
  const ExperimentConfig cfg = build_config(o);
  const ExperimentSummary s = run_experiment(cfg, out);
  std::cout << "algorithm,runs,mean_final_grad_norm\n";
  for (Algorithm a : cfg.algorithms) {
    std::cout << to_string(a) << ',' << cfg.repeats_for(a) << ',' << num(s.mean_final_grad_norm(a)) << '\n';
  }
  std::cerr << "wrote " << s.summary_csv.string() << " and " << s.plotdata_csv.string() << '\n';
  return 0;
}

double max_and_mean(const std::vector<Mat>& z, const Mat& ref, double& mean) {
  double worst = 0.0;
  mean = 0.0;
  for (const Mat& zi : z) {
    const double e = frobenius_norm(zi - ref);
    worst = std::max(worst, e);
    mean += e;
  }
  mean /= static_cast<double>(z.size());
  return worst;
}

int cmd_jhip_bench(const Overrides& o, std::size_t steps, bool stochastic, std::size_t batch) {
  const ExperimentConfig cfg = build_config(o);
  const ResolvedExperiment ex = resolve(cfg);
  const BilevelProblem& prob = ex.problem;
  const Vec x(prob.p);
  const Vec y = lower_level_solve_exact(prob, x, cfg.oracle_tol);
  std::vector<Mat> h(prob.n), j(prob.n);
  for (std::size_t i = 0; i < prob.n; ++i) {
    h[i] = prob.agent(i).hess_yy_g(x, y);
    j[i] = prob.agent(i).jac_xy_g(x, y);
  }
  const Mat zstar = jhip_reference(h, j);
  const RngPlan plan(cfg.seed);
  JhipMode mode = stochastic ? JhipMode::stochastic(prob.n, prob.p, prob.q,
                                                    [&](std::size_t i, std::size_t t) {
                                                      Rng rng = plan.stream(i, StreamRole::Jhip, 0, t);
                                                      const AgentOracles& a = prob.agent(i);
                                                      const Sample s = a.draw_lower(rng, batch);
                                                      return JhipSample{a.hess_yy_g(x, y, s), a.jac_xy_g(x, y, s)};
                                                    })
                             : JhipMode::deterministic(h, j);
  const StepSchedule gamma = cfg.gamma ? *cfg.gamma : default_jhip_schedule(prob.meta.l_g1, stochastic, &ex.network);
  std::cout << "t,max_err,mean_err\n";
  auto emit = [&](std::size_t t, const std::vector<Mat>& z) {
    double mean = 0.0;
    const double worst = max_and_mean(z, zstar, mean);
    std::cout << t << ',' << num(worst) << ',' << num(mean) << '\n';
  };
  std::vector<Mat> z0(prob.n, Mat(prob.q, prob.p));
  emit(0, z0);
  jhip_run_state(mode, ex.network, steps, gamma, std::move(z0), nullptr,
                 [&](const JhipState& st) { emit(st.t, st.z); });
  return 0;
}

int cmd_hg_check(const Overrides& o) {
  const ExperimentConfig cfg = build_config(o);
  const ResolvedExperiment ex = resolve(cfg);
  const BilevelProblem& prob = ex.problem;
  Rng rng = RngPlan(cfg.seed).stream(0, StreamRole::Test);
  std::normal_distribution<double> gauss(0.0, 0.5);
  Vec x(prob.p);
  for (std::size_t k = 0; k < prob.p; ++k) x[k] = gauss(rng);
  const HypergradientOracle oracle = exact_hypergradient(prob, x, cfg.oracle_tol);
  const Vec& y = oracle.y_star;

  std::cout << "estimator,steps,max_abs_err,mean_rel_err\n";
  auto emit = [&](const char* name, std::size_t steps, const std::vector<Vec>& est) {
    double worst = 0.0, rel = 0.0;
    for (std::size_t i = 0; i < prob.n; ++i) {
      const double e = norm(est[i] - oracle.per_agent[i]);
      worst = std::max(worst, e);
      rel += e / std::max(1e-300, norm(oracle.per_agent[i]));
    }
    std::cout << name << ',' << steps << ',' << num(worst) << ',' << num(rel / static_cast<double>(prob.n)) << '\n';
  };
  std::vector<Vec> est(prob.n);
  for (std::size_t steps = 1; steps <= 2 * prob.q; steps *= 2) {
    for (std::size_t i = 0; i < prob.n; ++i) est[i] = estimate_aid(prob.agent(i), x, y, steps, Vec(prob.q)).value;
    emit("aid", steps, est);
  }
  const double eps = 0.5 / prob.meta.L();
  for (std::size_t m = 1; m <= 256; m *= 4) {
    for (std::size_t i = 0; i < prob.n; ++i) est[i] = neumann_expected_estimate(prob.agent(i), x, y, eps, m);
    emit("neumann_expected", m, est);
  }
  std::vector<Mat> h(prob.n), j(prob.n);
  for (std::size_t i = 0; i < prob.n; ++i) {
    h[i] = prob.agent(i).hess_yy_g(x, y);
    j[i] = prob.agent(i).jac_xy_g(x, y);
  }
  const JhipMode mode = JhipMode::deterministic(h, j);
  const StepSchedule gamma = cfg.gamma ? *cfg.gamma : default_jhip_schedule(prob.meta.l_g1, false, &ex.network);
  for (std::size_t steps = 10; steps <= 640; steps *= 4) {
    const std::vector<Mat> z = jhip_run(mode, ex.network, steps, gamma, std::vector<Mat>(prob.n, Mat(prob.q, prob.p)));
    for (std::size_t i = 0; i < prob.n; ++i) est[i] = estimate_jhip(prob.agent(i), x, y, z[i]).value;
    emit("jhip", steps, est);
  }
  return 0;
}

std::vector<std::size_t> parse_k_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == item.size() && !item.empty(), ErrorKind::ParseError, "--k-list: cannot read '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

int cmd_rate_probe(const Overrides& o, const std::string& algorithm, const std::string& k_list, double scale) {
  const ExperimentConfig cfg = build_config(o);
  const RateProbeResult r =
      rate_probe(cfg, parse_algorithm(algorithm), parse_k_list(k_list), o.repeats.value_or(0), scale);
  write_rate_probe_csv(r, std::cout);
  return 0;
}

int cmd_dump_data(const Overrides& o, const std::string& out) {
  const ExperimentConfig cfg = build_config(o);
  const BilevelProblem prob = build_problem(cfg.problem);
  const auto files = dump_datasets_csv(prob, out);
  std::cerr << "wrote " << files.size() << " files to " << out << '\n';
  return 0;
}

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::ValidationError:
    case ErrorKind::ParseError:
    case ErrorKind::BadParameter:
      return 2;
    case ErrorKind::Divergence:
      return 3;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized bilevel optimization simulator"};
  app.require_subcommand(1);

  Overrides run_o, jb_o, hg_o, rp_o, dd_o;
  std::string run_out = "out", dump_out = "data";
  std::size_t jb_steps = 200, jb_batch = 1;
  bool jb_stochastic = false;
  std::string rp_algorithm = "dbogt", rp_k_list = "100,400";
  double rp_scale = 1.0;

  CLI::App* run_cmd = app.add_subcommand("run", "run an experiment preset and write CSV outputs");
  add_common(run_cmd, run_o, "quadratic-smoke");
  add_run_flags(run_cmd, run_o);
  run_cmd->add_option("--out", run_out, "output directory")->capture_default_str();

  CLI::App* jb_cmd = app.add_subcommand("jhip-bench", "per-iteration JHIP error against the direct solve");
  add_common(jb_cmd, jb_o, "quadratic-smoke");
  jb_cmd->add_option("--steps", jb_steps, "iterations")->capture_default_str();
  jb_cmd->add_option("--gamma", jb_o.gamma, "step size (default from the network and L_H)");
  jb_cmd->add_flag("--stochastic", jb_stochastic, "use sampled Hessians and Jacobians");
  jb_cmd->add_option("--batch", jb_batch, "minibatch for the stochastic variant")->capture_default_str();

  CLI::App* hg_cmd = app.add_subcommand("hg-check", "hypergradient estimators against the exact oracle");
  add_common(hg_cmd, hg_o, "quadratic-smoke");
  hg_cmd->add_option("--gamma", hg_o.gamma, "JHIP step size");

  CLI::App* rp_cmd = app.add_subcommand("rate-probe", "averaged squared gradient norm for several K");
  add_common(rp_cmd, rp_o, "quadratic-smoke");
  rp_cmd->add_option("--algorithm", rp_algorithm, "dbo, dbogt or dsbo")->capture_default_str();
  rp_cmd->add_option("--k-list", rp_k_list, "ascending comma separated K values")->capture_default_str();
  rp_cmd->add_option("--repeats", rp_o.repeats, "repeats per K");
  rp_cmd->add_option("--scale", rp_scale, "multiplier on the theorem step sizes")->capture_default_str();

  CLI::App* dd_cmd = app.add_subcommand("dump-data", "write the synthetic datasets as CSV");
  add_common(dd_cmd, dd_o, "synthetic-logistic-fig1a");
  dd_cmd->add_option("--out", dump_out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run_cmd) return cmd_run(run_o, run_out);
    if (*jb_cmd) return cmd_jhip_bench(jb_o, jb_steps, jb_stochastic, jb_batch);
    if (*hg_cmd) return cmd_hg_check(hg_o);
    if (*rp_cmd) return cmd_rate_probe(rp_o, rp_algorithm, rp_k_list, rp_scale);
    if (*dd_cmd) return cmd_dump_data(dd_o, dump_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
