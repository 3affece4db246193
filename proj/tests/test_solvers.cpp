#include <doctest.h>

#include <cmath>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dbo/error.hpp"
#include "dbo/network.hpp"
#include "dbo/problems.hpp"
#include "dbo/solvers.hpp"

using namespace dbo;

namespace {

WeightMatrix averaging_network(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(i, j) = 1.0 / static_cast<double>(n);
  return build_from_matrix(m);
}

RunConfig deterministic_config(Algorithm a, bool homogeneous) {
  RunConfig c;
  c.algorithm = a;
  c.regime = {false, homogeneous};
  c.K = 30;
  c.T = 20;
  c.N = 8;
  c.eta_x = StepSchedule::constant(0.05);
  c.eta_y = StepSchedule::constant(0.04);
  return c;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no exception");
  return ErrorKind::IoError;
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> cells_of(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

TEST_CASE("single agent DBO reduces to gradient descent on the exact hypergradient") {
  QuadraticSpec spec;
  spec.n = 1;
  spec.seed = 5;
  const BilevelProblem prob = make_quadratic(spec);
  RunConfig c = deterministic_config(Algorithm::Dbo, true);
  c.T = 300;
  c.N = 2 * prob.q;
  c.eta_y = StepSchedule::constant(1.0 / prob.meta.L());
  c.K = 25;
  const RunMetrics m = dbo_run(prob, trivial_network(), c);

  Vec x(prob.p);
  for (std::size_t k = 0; k < c.K; ++k) x.axpy(-c.eta_x.at(k), quadratic_hypergradient(prob, x));
  CHECK(norm(m.x_final[0] - x) <= 1e-10 * (1.0 + norm(x)));
  CHECK(m.rows.size() == c.K + 1);
}

TEST_CASE("identical agents under exact averaging stay in consensus") {
  const BilevelProblem prob = make_quadratic_testbed(6, 3, 4, 0.0, 9);
  for (Algorithm a : {Algorithm::Dbo, Algorithm::Dbogt}) {
    const RunMetrics m = run(prob, averaging_network(6), deterministic_config(a, true));
    for (const auto& r : m.rows) CHECK(r.consensus <= 1e-12);
    for (const Vec& x : m.x_final) CHECK(norm(x - m.x_final[0]) <= 1e-12);
  }
}

TEST_CASE("outer average identity and gradient tracking identity hold") {
  const BilevelProblem prob = make_quadratic_testbed(8, 3, 4, 0.6, 3);
  const WeightMatrix w = build_ring(8, 0.4);
  for (Algorithm a : {Algorithm::Dbo, Algorithm::Dbogt}) {
    CAPTURE(to_string(a));
    const RunMetrics m = run(prob, w, deterministic_config(a, false));
    CHECK(m.max_average_identity <= 1e-12);
    CHECK(m.max_inner_tracking <= 1e-10);
    CHECK(m.max_jhip_tracking <= 1e-10);
    if (a == Algorithm::Dbogt) {
      CHECK(m.max_outer_tracking <= 1e-10);
      for (std::size_t k = 0; k + 1 < m.rows.size(); ++k) CHECK(m.rows[k].tracker_drift.has_value());
    } else {
      CHECK_FALSE(m.rows[0].tracker_drift.has_value());
    }
  }
}

TEST_CASE("heterogeneous tracking inner loop converges to the consensus lower solution") {
  const BilevelProblem prob = make_quadratic_testbed(4, 3, 4, 0.6, 11);
  const WeightMatrix w = build_ring(4, 0.7);
  std::vector<Vec> xs;
  for (std::size_t i = 0; i < prob.n; ++i) {
    Vec x(prob.p);
    for (std::size_t j = 0; j < prob.p; ++j) x[j] = 0.1 * static_cast<double>(i) - 0.2 * static_cast<double>(j);
    xs.push_back(x);
  }
  const Vec target = lower_level_solve(prob, xs, 1e-13);
  const InnerLoopResult r = inner_loop(prob, w, xs, std::vector<Vec>(prob.n, Vec(prob.q)), InnerMode::Tracking, 200,
                                       StepSchedule::constant(1.0 / prob.meta.L()));
  double worst = 0.0;
  for (const Vec& y : r.y) worst = std::max(worst, norm(y - target));
  CHECK(worst <= 1e-6);
  CHECK(r.max_tracking_residual <= 1e-10);

  // Persisting the tracker across calls keeps the identity intact.
  const InnerLoopResult again = inner_loop(prob, w, xs, r.y, InnerMode::Tracking, 5,
                                           StepSchedule::constant(1.0 / prob.meta.L()), nullptr, r.v, r.g_last);
  CHECK(again.max_tracking_residual <= 1e-10);
}

TEST_CASE("homogeneous inner loop with unit step on g = |y - x|^2 / 2 lands on x") {
  const std::size_t p = 3;
  auto agent = std::make_shared<QuadraticAgent>(Mat::identity(p), Mat::identity(p), Vec(p), Vec(p), Vec(p));
  BilevelProblem prob;
  prob.name = "identity";
  prob.n = 2;
  prob.p = p;
  prob.q = p;
  prob.agents = {agent, agent};
  prob.meta.mu = 1.0;
  prob.meta.l_g1 = 1.0;
  prob.meta.l_f1 = 1.0;
  prob.meta.homogeneous_g = true;
  const std::vector<Vec> xs{Vec{1.0, 2.0, 3.0}, Vec{-1.0, 0.5, 4.0}};
  const InnerLoopResult r = inner_loop(prob, averaging_network(2), xs, std::vector<Vec>(2, Vec(p)),
                                       InnerMode::LocalGradient, 1, StepSchedule::constant(1.0));
  for (std::size_t i = 0; i < 2; ++i) CHECK(norm(r.y[i] - xs[i]) <= 1e-15);
}

TEST_CASE("consensus gap stays within kappa times the consensus error") {
  const BilevelProblem prob = make_quadratic_testbed(6, 3, 4, 0.8, 21);
  RunConfig c = deterministic_config(Algorithm::Dbo, false);
  c.eta_x = StepSchedule::constant(0.2);
  const RunMetrics m = dbo_run(prob, build_ring(6, 0.5), c);
  CHECK(m.max_consensus_gap_excess <= 1e-9);
  bool nontrivial = false;
  for (const auto& r : m.rows) nontrivial = nontrivial || r.consensus > 1e-6;
  CHECK(nontrivial);
}

TEST_CASE("accumulators are running sums of the per-row quantities") {
  const BilevelProblem prob = make_quadratic_testbed(5, 3, 4, 0.5, 2);
  RunConfig c = deterministic_config(Algorithm::Dbo, false);
  c.record_lemma_accumulators = true;
  const RunMetrics m = dbo_run(prob, build_ring(5, 0.4), c);
  double s = 0.0, t = 0.0;
  for (const auto& r : m.rows) {
    s += r.consensus * r.consensus;
    t += *r.grad_norm_mean * *r.grad_norm_mean;
    CHECK(r.S_K == doctest::Approx(s).epsilon(1e-12));
    CHECK(*r.T_K == doctest::Approx(t).epsilon(1e-12));
  }
  CHECK(m.rows[0].A_K.has_value());
  CHECK_FALSE(m.rows.back().inner_residual.has_value());
  for (std::size_t k = 1; k < m.rows.size(); ++k) CHECK(m.rows[k].E_K >= m.rows[k - 1].E_K);
}

TEST_CASE("stochastic runs are reproducible and independent of the worker count") {
  QuadraticSpec spec;
  spec.n = 8;
  spec.lower_spread = 0.5;
  spec.upper_spread = 0.5;
  spec.sigma = 0.3;
  spec.seed = 4;
  const BilevelProblem prob = make_quadratic(spec);
  const WeightMatrix w = build_ring(8, 0.4);
  RunConfig c;
  c.algorithm = Algorithm::Dsbo;
  c.regime = {true, false};
  c.K = 15;
  c.T = 10;
  c.N = 6;
  c.eta_x = StepSchedule::constant(0.05);
  c.eta_y = StepSchedule::constant(0.1);
  c.seed = 77;
  const RunMetrics one = dsbo_run(prob, w, c);
  c.workers = 8;
  const RunMetrics eight = dsbo_run(prob, w, c);
  for (std::size_t i = 0; i < prob.n; ++i) {
    for (std::size_t j = 0; j < prob.p; ++j) CHECK(one.x_final[i][j] == eight.x_final[i][j]);
  }
  c.seed = 78;
  const RunMetrics other = dsbo_run(prob, w, c);
  CHECK(norm(other.x_bar_final - one.x_bar_final) > 0.0);
}

TEST_CASE("noise-free stochastic runs do not depend on the seed") {
  SUBCASE("neumann branch with a forced truncation") {
    const BilevelProblem prob = make_quadratic_testbed(4, 3, 4, 0.0, 8);
    RunConfig c;
    c.algorithm = Algorithm::Dsbo;
    c.regime = {true, true};
    c.K = 10;
    c.M = 6;
    c.epsilon = 0.5 / prob.meta.L();
    c.neumann_fixed_m_prime = 5;
    c.eta_x = StepSchedule::constant(0.05);
    c.eta_y = StepSchedule::constant(0.2);
    c.seed = 1;
    const RunMetrics a = dsbo_run(prob, build_ring(4, 0.5), c);
    c.seed = 2;
    const RunMetrics b = dsbo_run(prob, build_ring(4, 0.5), c);
    CHECK(norm(a.x_bar_final - b.x_bar_final) == 0.0);
  }
  SUBCASE("stochastic hessian-inverse branch") {
    const BilevelProblem prob = make_quadratic_testbed(4, 3, 4, 0.5, 8);
    RunConfig c;
    c.algorithm = Algorithm::Dsbo;
    c.regime = {true, false};
    c.K = 10;
    c.eta_x = StepSchedule::constant(0.05);
    c.eta_y = StepSchedule::constant(0.2);
    c.seed = 1;
    const RunMetrics a = dsbo_run(prob, build_ring(4, 0.5), c);
    c.seed = 2;
    const RunMetrics b = dsbo_run(prob, build_ring(4, 0.5), c);
    CHECK(norm(a.x_bar_final - b.x_bar_final) == 0.0);
  }
}

TEST_CASE("configuration errors are reported as validation errors") {
  const BilevelProblem het = make_quadratic_testbed(4, 3, 4, 0.5, 1);
  const WeightMatrix w = build_ring(4, 0.5);
  CHECK(kind_of([&] { dbo_run(het, w, deterministic_config(Algorithm::Dbo, true)); }) == ErrorKind::ValidationError);
  RunConfig c = deterministic_config(Algorithm::Dbo, false);
  c.regime.stochastic = true;
  CHECK(kind_of([&] { dbo_run(het, w, c); }) == ErrorKind::ValidationError);
  c = deterministic_config(Algorithm::Dbo, false);
  CHECK(kind_of([&] { dbogt_run(het, w, c); }) == ErrorKind::ValidationError);
  c.K = 0;
  CHECK(kind_of([&] { dbo_run(het, w, c); }) == ErrorKind::ValidationError);
  CHECK(kind_of([&] { dbo_run(het, build_ring(5, 0.5), deterministic_config(Algorithm::Dbo, false)); }) ==
        ErrorKind::ValidationError);

  const BilevelProblem hom = make_quadratic_testbed(4, 3, 4, 0.0, 1);
  RunConfig s;
  s.algorithm = Algorithm::Dsbo;
  s.regime = {true, true};
  s.epsilon = 2.0 / hom.meta.L();
  try {
    dsbo_run(hom, w, s);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ValidationError);
    CHECK(std::string(e.what()).find("epsilon >= 1/L") != std::string::npos);
  }
  CHECK(parse_algorithm("DBOGT") == Algorithm::Dbogt);
  CHECK(kind_of([] { parse_algorithm("sgd"); }) == ErrorKind::ValidationError);
}

TEST_CASE("an oversized outer step raises a divergence error") {
  const BilevelProblem prob = make_quadratic_testbed(4, 3, 4, 0.5, 1);
  RunConfig c = deterministic_config(Algorithm::Dbo, false);
  c.eta_x = StepSchedule::constant(1e4);
  c.K = 200;
  CHECK(kind_of([&] { dbo_run(prob, build_ring(4, 0.5), c); }) == ErrorKind::Divergence);
}

TEST_CASE("metrics CSV layout") {
  const BilevelProblem prob = make_quadratic_testbed(4, 3, 4, 0.5, 1);
  RunConfig c = deterministic_config(Algorithm::Dbogt, false);
  c.K = 3;
  const RunMetrics m = dbogt_run(prob, build_ring(4, 0.5), c);
  std::ostringstream out;
  write_metrics_csv(m, out);
  const auto lines = lines_of(out.str());
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "k,grad_norm_mean,consensus,inner_residual,tracker_drift,S_K,E_K,T_K");
  for (std::size_t r = 1; r < lines.size(); ++r) CHECK(cells_of(lines[r]).size() == 8);
  const auto last = cells_of(lines.back());
  CHECK(last[0] == "3");
  CHECK(last[3].empty());
  CHECK(last[4].empty());
  const auto first = cells_of(lines[1]);
  CHECK(std::stod(first[1]) == *m.rows[0].grad_norm_mean);

  c.record_oracle_metrics = false;
  std::ostringstream bare;
  write_metrics_csv(dbogt_run(prob, build_ring(4, 0.5), c), bare);
  const auto row = cells_of(lines_of(bare.str())[1]);
  CHECK(row[1].empty());
  CHECK(row[7].empty());
}

TEST_CASE("theorem presets produce valid configurations") {
  const BilevelProblem het = make_quadratic_testbed(4, 3, 4, 0.5, 1);
  const BilevelProblem hom = make_quadratic_testbed(4, 3, 4, 0.0, 1);
  const WeightMatrix w = build_ring(4, 0.5);
  for (const BilevelProblem* p : {&het, &hom}) {
    CHECK_NOTHROW(theorem1_preset(*p, w, 100).validate(*p));
    CHECK_NOTHROW(theorem2_preset(*p, w, 100).validate(*p));
    CHECK_NOTHROW(theorem3_preset(*p, w, 100).validate(*p));
  }
  const RunConfig a = theorem1_preset(het, w, 100);
  const RunConfig b = theorem1_preset(het, w, 800);
  CHECK(a.eta_x.base / b.eta_x.base == doctest::Approx(2.0));
  CHECK(theorem3_preset(het, w, 100).T == 10);
}
