#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dbo/error.hpp"
#include "dbo/numerics.hpp"
#include "dbo/problems.hpp"
#include "test_support.hpp"

using namespace dbo;

namespace {

BilevelProblem single_quadratic(Mat a, Mat b, Vec b0, Vec c, Vec d, double mu, double l) {
  BilevelProblem prob;
  prob.n = 1;
  prob.p = b.cols();
  prob.q = b.rows();
  prob.agents.push_back(std::make_shared<QuadraticAgent>(std::move(a), std::move(b), std::move(b0), std::move(c),
                                                         std::move(d)));
  prob.meta.mu = mu;
  prob.meta.l_g1 = l;
  prob.validate();
  return prob;
}

Vec central_difference(const BilevelProblem& prob, const Vec& x, double h) {
  Vec out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    Vec xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    out[k] = (upper_objective(prob, xp, 1e-12) - upper_objective(prob, xm, 1e-12)) / (2 * h);
  }
  return out;
}

BilevelProblem small_logistic(std::size_t n = 4, std::uint64_t seed = 3) {
  LogisticSpec s;
  s.n = n;
  s.p = 6;
  s.train_per_agent = 80;
  s.val_per_agent = 60;
  s.seed = seed;
  return make_synthetic_logistic(s);
}

BilevelProblem small_hypercleaning(double corruption = 0.3, std::uint64_t seed = 4) {
  HypercleaningSpec s;
  s.n = 3;
  s.features = 5;
  s.train_per_agent = 12;
  s.val_per_agent = 30;
  s.corruption_rate = corruption;
  s.c_r = 0.01;
  s.seed = seed;
  return make_synthetic_hypercleaning(s);
}

double rel_err(const Vec& a, const Vec& b) { return norm(a - b) / std::max(1e-300, norm(b)); }

}  // namespace

TEST_CASE("meta validation") {
  SmoothnessMeta m;
  CHECK_NOTHROW(m.validate());
  m.mu = 0;
  CHECK_THROWS_AS(m.validate(), Error);
  m.mu = 5;
  m.l_g1 = 1;
  m.l_f1 = 1;
  CHECK_THROWS_AS(m.validate(), Error);
  m.l_g1 = 10;
  m.sigma_f = -1;
  CHECK_THROWS_AS(m.validate(), Error);
  m.sigma_f = 0;
  CHECK(m.kappa() == doctest::Approx(2.0));
}

TEST_CASE("lower-level solve on closed forms") {
  SUBCASE("g = 1/2|y - x|^2 gives y* = x") {
    auto prob = single_quadratic(Mat::identity(3), Mat::identity(3), Vec(3), Vec(3), Vec(3), 1, 1);
    Vec x{1.0, -2.0, 0.5};
    CHECK(norm(lower_level_solve_exact(prob, x, 1e-12) - x) <= 1e-12);
  }
  SUBCASE("g = 1/2 y'Ay - x'y gives A^-1 x") {
    Mat a{{3, 1}, {1, 2}};
    auto prob = single_quadratic(a, Mat::identity(2), Vec(2), Vec(2), Vec(2), 1, 4);
    Vec x{1, 1};
    CHECK(norm(lower_level_solve_exact(prob, x, 1e-12) - spd_solve(a, x)) <= 1e-12);
  }
  SUBCASE("testbed matches averaged closed form") {
    auto prob = make_quadratic_testbed(5, 3, 4, 0.7, 11);
    std::mt19937_64 rng(1);
    Vec x = testing_support::random_vec(3, rng);
    CHECK(norm(lower_level_solve_exact(prob, x, 1e-12) - quadratic_y_star(prob, x)) <= 1e-11);
  }
  SUBCASE("logistic residual") {
    auto prob = small_logistic();
    Vec x(prob.p);
    Vec y = lower_level_solve_exact(prob, x, 1e-10);
    std::vector<Vec> xs(prob.n, x);
    CHECK(norm(mean_grad_y_g(prob, xs, y)) <= 1e-10);
  }
  SUBCASE("non-positive tol rejected") {
    auto prob = make_quadratic_testbed(2, 2, 2, 0.0, 1);
    CHECK_THROWS_AS(lower_level_solve_exact(prob, Vec(2), 0.0), Error);
  }
}

TEST_CASE("exact hypergradient") {
  SUBCASE("scalar composition") {
    const double a = 1.7, c = 0.3;
    // g = 1/2 y^2 - a x y has the same y-derivatives as 1/2 (y - a x)^2
    auto prob = single_quadratic(Mat{{1}}, Mat{{a}}, Vec{0}, Vec{c}, Vec{0}, 1, 1 + a);
    for (double x : {-1.0, 0.0, 2.5}) {
      auto hg = exact_hypergradient(prob, Vec{x}, 1e-12);
      CHECK(hg.mean[0] == doctest::Approx((x - c) + a * a * x).epsilon(1e-12));
    }
  }
  SUBCASE("quadratic testbed vs closed form") {
    for (double het : {0.0, 0.5, 2.0}) {
      auto prob = make_quadratic_testbed(6, 4, 5, het, 7);
      std::mt19937_64 rng(2);
      Vec x = testing_support::random_vec(4, rng);
      auto hg = exact_hypergradient(prob, x, 1e-13);
      CHECK(norm(hg.mean - quadratic_hypergradient(prob, x)) <= 1e-10);
      CHECK(hg.per_agent.size() == 6);
    }
  }
  SUBCASE("homogeneous agents agree with the local surrogate") {
    auto prob = make_quadratic_testbed(4, 3, 3, 0.0, 5);
    QuadraticSpec spec;
    spec.n = 4;
    spec.upper_spread = 1.0;
    auto prob2 = make_quadratic(spec);
    for (const auto* pr : {&prob, &prob2}) {
      Vec x{0.2, -0.1, 0.4};
      const double tol = 1e-10;
      auto hg = exact_hypergradient(*pr, x, tol);
      for (std::size_t i = 0; i < pr->n; ++i) {
        Vec loc = local_surrogate_hypergradient(*pr, i, x, hg.y_star);
        CHECK(norm(loc - hg.per_agent[i]) <= tol * pr->meta.kappa());
      }
    }
  }
  SUBCASE("finite differences on all generators") {
    std::mt19937_64 rng(9);
    auto quad = make_quadratic_testbed(4, 3, 4, 1.0, 3);
    Vec xq = testing_support::random_vec(3, rng);
    CHECK(rel_err(central_difference(quad, xq, 1e-5), exact_hypergradient(quad, xq, 1e-12).mean) <= 1e-4);

    auto logi = small_logistic();
    Vec xl = testing_support::random_vec(logi.p, rng, 0.5);
    CHECK(rel_err(central_difference(logi, xl, 1e-5), exact_hypergradient(logi, xl, 1e-12).mean) <= 1e-4);

    auto hc = small_hypercleaning();
    Vec xh = testing_support::random_vec(hc.p, rng, 0.5);
    CHECK(rel_err(central_difference(hc, xh, 1e-5), exact_hypergradient(hc, xh, 1e-12).mean) <= 1e-4);
  }
}

TEST_CASE("oracle consistency on every generator") {
  QuadraticSpec qs;
  qs.n = 3;
  qs.lower_spread = 0.5;
  qs.sigma = 0.3;
  std::vector<BilevelProblem> problems{make_quadratic(qs), small_logistic(), small_hypercleaning()};
  for (const auto& prob : problems) {
    CAPTURE(prob.name);
    std::mt19937_64 rng(21);
    SUBCASE("Hessian-vector products match the Hessian") {
      for (int trial = 0; trial < 5; ++trial) {
        Vec x = testing_support::random_vec(prob.p, rng, 0.5);
        Vec y = testing_support::random_vec(prob.q, rng);
        Vec v = testing_support::random_vec(prob.q, rng);
        Rng srng(trial);
        for (std::size_t i = 0; i < prob.n; ++i) {
          const auto& ag = prob.agent(i);
          Vec a = ag.hess_yy_g_vp(x, y, v);
          Vec b = matvec(ag.hess_yy_g(x, y), v);
          CHECK(norm(a - b) <= 1e-12 * std::max(1.0, norm(b)));
          Sample s = ag.draw_lower(srng, 3);
          Vec as = ag.hess_yy_g_vp(x, y, v, s);
          Vec bs = matvec(ag.hess_yy_g(x, y, s), v);
          CHECK(norm(as - bs) <= 1e-12 * std::max(1.0, norm(bs)));
        }
      }
    }
    SUBCASE("mu lower-bounds the Hessian spectrum") {
      for (int trial = 0; trial < 20; ++trial) {
        Vec x = prob.name == "quadratic" ? testing_support::random_vec(prob.p, rng)
                                         : Vec(prob.p);  // mu is stated at the reference lambda = 0
        Vec y = testing_support::random_vec(prob.q, rng, 2.0);
        for (std::size_t i = 0; i < prob.n; ++i) {
          auto ev = sym_eigenvalues(prob.agent(i).hess_yy_g(x, y));
          CHECK(ev.back() >= prob.meta.mu * (1 - 1e-12));
          CHECK(ev.front() <= prob.meta.L() * (1 + 1e-12));
        }
      }
    }
    SUBCASE("stochastic oracles are unbiased") {
      Vec x = testing_support::random_vec(prob.p, rng, 0.3);
      Vec y = testing_support::random_vec(prob.q, rng);
      Vec v = testing_support::random_vec(prob.q, rng);
      const auto& ag = prob.agent(prob.n - 1);
      const int draws = 10000;
      auto check_mean = [&](auto oracle, auto draw, const Vec& exact) {
        Vec sum(exact.size()), sumsq(exact.size());
        Rng r(77);
        for (int k = 0; k < draws; ++k) {
          Vec s = oracle(draw(r));
          for (std::size_t j = 0; j < s.size(); ++j) {
            sum[j] += s[j];
            sumsq[j] += s[j] * s[j];
          }
        }
        for (std::size_t j = 0; j < exact.size(); ++j) {
          const double mean = sum[j] / draws;
          const double var = std::max(0.0, sumsq[j] / draws - mean * mean);
          const double se = std::sqrt(var / draws);
          CHECK(std::abs(mean - exact[j]) <= 5 * se + 1e-12);
        }
      };
      auto up = [&](Rng& r) { return ag.draw_upper(r, 1); };
      auto lo = [&](Rng& r) { return ag.draw_lower(r, 1); };
      auto flat = [](const Mat& m) { return Vec(std::vector<double>(m.data(), m.data() + m.size())); };
      check_mean([&](const Sample& s) { return ag.grad_x_f(x, y, s); }, up, ag.grad_x_f(x, y));
      check_mean([&](const Sample& s) { return ag.grad_y_f(x, y, s); }, up, ag.grad_y_f(x, y));
      check_mean([&](const Sample& s) { return ag.grad_y_g(x, y, s); }, lo, ag.grad_y_g(x, y));
      check_mean([&](const Sample& s) { return ag.hess_yy_g_vp(x, y, v, s); }, lo, ag.hess_yy_g_vp(x, y, v));
      if (prob.p * prob.q <= 400) {
        check_mean([&](const Sample& s) { return flat(ag.jac_xy_g(x, y, s)); }, lo, flat(ag.jac_xy_g(x, y)));
      }
    }
  }
}

TEST_CASE("quadratic testbed structure") {
  auto prob = make_quadratic_testbed(3, 2, 3, 0.0, 9);
  CHECK(prob.meta.homogeneous_g);
  const auto& a0 = dynamic_cast<const QuadraticAgent&>(prob.agent(0));
  for (std::size_t i = 1; i < 3; ++i) {
    const auto& ai = dynamic_cast<const QuadraticAgent&>(prob.agent(i));
    CHECK(ai.a() == a0.a());
    CHECK(ai.b() == a0.b());
    CHECK(ai.c() == a0.c());
  }
  auto het = make_quadratic_testbed(3, 2, 3, 1.0, 9);
  CHECK_FALSE(het.meta.homogeneous_g);
}

TEST_CASE("synthetic logistic") {
  auto a = small_logistic(4, 5);
  auto b = small_logistic(4, 5);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& la = dynamic_cast<const LogisticAgent&>(a.agent(i));
    const auto& lb = dynamic_cast<const LogisticAgent&>(b.agent(i));
    CHECK(la.train().features == lb.train().features);
    CHECK(la.train().labels == lb.train().labels);
    CHECK(la.val().features == lb.val().features);
  }
  SUBCASE("feature scale grows with the agent index") {
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& la = dynamic_cast<const LogisticAgent&>(a.agent(i));
      const double ms = squared_frobenius_norm(la.train().features) / la.train().features.size();
      CHECK(std::sqrt(ms) == doctest::Approx(static_cast<double>(i + 1)).epsilon(0.15));
    }
  }
  SUBCASE("heterogeneity witness") {
    LogisticSpec spec;
    spec.train_per_agent = 100;
    spec.val_per_agent = 10;
    auto full = make_synthetic_logistic(spec);
    CHECK(full.n == 20);
    CHECK(full.p == 50);
    Vec x(full.p), y(full.q, 0.1);
    double spread = 0.0;
    Mat h0 = full.agent(0).hess_yy_g(x, y);
    for (std::size_t i = 1; i < full.n; ++i) spread = std::max(spread, frobenius_norm(full.agent(i).hess_yy_g(x, y) - h0));
    CHECK(spread > 0.0);
    CHECK_FALSE(full.meta.homogeneous_g);
  }
  SUBCASE("single agent") {
    auto one = small_logistic(1, 2);
    CHECK(one.n == 1);
    CHECK(one.meta.homogeneous_g);
  }
  CHECK_THROWS_AS(make_synthetic_logistic(3, 4, 5, 10, 0.1, 1), Error);
  CHECK_THROWS_AS(make_synthetic_logistic(3, 4, 4, 10, -0.1, 1), Error);
}

TEST_CASE("synthetic hypercleaning") {
  auto prob = make_synthetic_hypercleaning(4, 5, 20, 0.2, 0.001, 3);
  CHECK(prob.meta.mu == doctest::Approx(0.002));
  CHECK(prob.p == 80);
  CHECK(prob.q == 5);
  CHECK_THROWS_AS(make_synthetic_hypercleaning(4, 5, 20, 0.2, 0.0, 3), Error);
  SUBCASE("corruption flips the stated fraction of training labels") {
    auto clean = make_synthetic_hypercleaning(4, 5, 20, 0.0, 0.001, 3);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& dirty = dynamic_cast<const HypercleaningAgent&>(prob.agent(i));
      const auto& ok = dynamic_cast<const HypercleaningAgent&>(clean.agent(i));
      CHECK(dirty.train().features == ok.train().features);
      int flipped = 0;
      for (std::size_t e = 0; e < 20; ++e) flipped += dirty.train().labels[e] != ok.train().labels[e];
      CHECK(flipped == 4);
    }
  }
  SUBCASE("clean data gives a smaller hypergradient at lambda = 0") {
    double clean_sum = 0.0, dirty_sum = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      auto clean = small_hypercleaning(0.0, seed);
      auto dirty = small_hypercleaning(0.4, seed);
      clean_sum += norm(exact_hypergradient(clean, Vec(clean.p), 1e-10).mean);
      dirty_sum += norm(exact_hypergradient(dirty, Vec(dirty.p), 1e-10).mean);
    }
    CHECK(clean_sum < dirty_sum);
  }
}

TEST_CASE("dataset CSV dump") {
  auto prob = small_logistic(2, 1);
  auto dir = std::filesystem::temp_directory_path() / "dbo_test_dump";
  std::filesystem::remove_all(dir);
  auto files = dump_datasets_csv(prob, dir);
  CHECK(files.size() == 4);
  std::ifstream in(dir / "agent01_train.csv");
  std::string line;
  std::size_t rows = 0;
  const auto& ag = dynamic_cast<const LogisticAgent&>(prob.agent(1));
  while (std::getline(in, line)) {
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    REQUIRE(vals.size() == prob.p + 1);
    for (std::size_t k = 0; k < prob.p; ++k) CHECK(vals[k] == ag.train().features(rows, k));
    CHECK(vals.back() == ag.train().labels[rows]);
    ++rows;
  }
  CHECK(rows == ag.train().size());
}
