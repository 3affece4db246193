#include <doctest.h>

#include <cmath>

#include "dbo/error.hpp"
#include "dbo/jhip.hpp"
#include "dbo/numerics.hpp"
#include "test_support.hpp"

using namespace dbo;
using testing_support::random_jhip_instance;

namespace {

std::vector<Mat> zeros(std::size_t n, std::size_t q, std::size_t p) { return std::vector<Mat>(n, Mat(q, p)); }

double max_err(const std::vector<Mat>& z, const Mat& ref) {
  double m = 0;
  for (const Mat& zi : z) m = std::max(m, frobenius_norm(zi - ref));
  return m;
}

JhipMode noisy_mode(const testing_support::JhipInstance& inst, double sigma, std::uint64_t seed) {
  const std::size_t q = inst.h[0].rows(), p = inst.j[0].rows();
  return JhipMode::stochastic(inst.h.size(), p, q, [=](std::size_t i, std::size_t t) {
    Rng rng(RngPlan(seed).derive(i, StreamRole::Jhip, 0, t));
    std::normal_distribution<double> nd(0.0, sigma);
    JhipSample s{inst.h[i], inst.j[i]};
    for (std::size_t a = 0; a < q; ++a)
      for (std::size_t b = a; b < q; ++b) {
        const double e = nd(rng);
        s.h(a, b) += e;
        if (b != a) s.h(b, a) += e;
      }
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = 0; b < q; ++b) s.j(a, b) += nd(rng);
    return s;
  });
}

}  // namespace

TEST_CASE("jhip_init") {
  auto inst = random_jhip_instance(3, 4, 2, 1);
  auto mode = JhipMode::deterministic(inst.h, inst.j);
  SUBCASE("zero start") {
    auto s = jhip_init(mode, zeros(3, 4, 2));
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(s.y_tracker[i] == -1.0 * inst.j[i].transpose());
      CHECK(s.g_prev[i] == Mat(4, 2));
    }
    CHECK(s.t == 0);
  }
  SUBCASE("zero-variance sampler matches deterministic init up to the G convention") {
    auto smode = noisy_mode(inst, 0.0, 3);
    std::mt19937_64 rng(4);
    std::vector<Mat> z0;
    for (int i = 0; i < 3; ++i) z0.push_back(testing_support::random_mat(4, 2, rng));
    auto sd = jhip_init(mode, z0);
    auto ss = jhip_init(smode, z0);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(frobenius_norm(sd.y_tracker[i] - ss.y_tracker[i]) <= 1e-14);
      CHECK(frobenius_norm(ss.g_prev[i] - (sd.g_prev[i] - inst.j[i].transpose())) <= 1e-14);
    }
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(jhip_init(mode, zeros(3, 2, 4)), Error);
    CHECK_THROWS_AS(jhip_init(mode, zeros(2, 4, 2)), Error);
    CHECK_THROWS_AS(JhipMode::deterministic({Mat(2, 2)}, {Mat(3, 3)}), Error);
  }
}

TEST_CASE("fixed point") {
  auto inst = random_jhip_instance(1, 3, 2, 5);
  std::vector<Mat> h(4, inst.h[0]), j(4, inst.j[0]);
  auto mode = JhipMode::deterministic(h, j);
  const Mat zstar = jhip_reference(h, j);
  auto s = jhip_init(mode, std::vector<Mat>(4, zstar));
  for (const Mat& y : s.y_tracker) CHECK(frobenius_norm(y) <= 1e-12);
  auto w = build_ring(4, 0.5);
  for (int t = 0; t < 20; ++t) jhip_step(s, mode, w, 0.05);
  CHECK(max_err(s.z, zstar) <= 1e-12);
}

TEST_CASE("single agent is gradient descent") {
  auto inst = random_jhip_instance(1, 3, 2, 6);
  auto mode = JhipMode::deterministic(inst.h, inst.j);
  auto s = jhip_init(mode, zeros(1, 3, 2));
  Mat z(3, 2);
  const double gamma = 0.03;
  for (int t = 0; t < 25; ++t) {
    jhip_step(s, mode, trivial_network(), gamma);
    z -= gamma * (matmul(inst.h[0], z) - inst.j[0].transpose());
    CHECK(frobenius_norm(s.z[0] - z) <= 1e-12 * (1 + frobenius_norm(z)));
  }
}

TEST_CASE("homogeneous consensus start follows centralized descent") {
  auto inst = random_jhip_instance(1, 4, 3, 7);
  std::vector<Mat> h(5, inst.h[0]), j(5, inst.j[0]);
  auto mode = JhipMode::deterministic(h, j);
  auto w = build_ring(5, 0.4);
  auto z = jhip_run(mode, w, 30, StepSchedule::constant(0.02), zeros(5, 4, 3));
  Mat gd(4, 3);
  for (int t = 0; t < 30; ++t) gd -= 0.02 * (matmul(inst.h[0], gd) - inst.j[0].transpose());
  CHECK(max_err(z, gd) <= 1e-12);
}

TEST_CASE("diagonal closed form") {
  std::vector<Mat> h(3, 2.0 * Mat::identity(2));
  std::vector<Mat> j{Mat{{1, 0}, {0, 1}}, Mat{{2, 0}, {0, 2}}, Mat{{3, 0}, {0, 3}}};
  auto mode = JhipMode::deterministic(h, j);
  auto z = jhip_run(mode, build_ring(3, 0.4), 300, StepSchedule::constant(0.2), zeros(3, 2, 2));
  CHECK(max_err(z, Mat::identity(2)) <= 1e-9);
}

TEST_CASE("deterministic convergence, tracking identity and geometric envelope") {
  auto w = build_ring(5, 0.5);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto inst = random_jhip_instance(5, 4, 3, seed);
    auto mode = JhipMode::deterministic(inst.h, inst.j);
    const Mat zstar = jhip_reference(inst.h, inst.j);
    CHECK(zstar.rows() == 4);
    CHECK(zstar.cols() == 3);
    std::vector<double> log_err;
    double worst_tracking = 0;
    auto s = jhip_run_state(mode, w, 500, StepSchedule::constant(1.0 / (2 * inst.l_max)), zeros(5, 4, 3), nullptr,
                            [&](const JhipState& st) {
                              worst_tracking = std::max(worst_tracking, jhip_tracking_residual(st, mode));
                              log_err.push_back(std::log(max_err(st.z, zstar)));
                            });
    CHECK(max_err(s.z, zstar) <= 1e-6);
    CHECK(worst_tracking <= 1e-10);
    // least squares fit of log error on t over [10, 200]
    double st = 0, sy = 0, stt = 0, sty = 0, syy = 0;
    const double cnt = 191;
    for (int t = 10; t <= 200; ++t) {
      st += t;
      sy += log_err[t];
      stt += double(t) * t;
      sty += t * log_err[t];
      syy += log_err[t] * log_err[t];
    }
    const double cov = sty - st * sy / cnt, vt = stt - st * st / cnt, vy = syy - sy * sy / cnt;
    const double r2 = cov * cov / (vt * vy);
    CHECK(cov < 0);
    CHECK(r2 >= 0.95);
  }
}

TEST_CASE("stochastic mean squared error decays like 1/t") {
  auto inst = random_jhip_instance(5, 4, 3, 42);
  const Mat zstar = jhip_reference(inst.h, inst.j);
  auto w = build_ring(5, 0.5);
  const auto schedule = default_jhip_schedule(inst.l_max, true);
  double mse100 = 0, mse400 = 0;
  const int seeds = 20;
  for (int seed = 0; seed < seeds; ++seed) {
    auto mode = noisy_mode(inst, 0.1, 1000 + seed);
    jhip_run_state(mode, w, 400, schedule, zeros(5, 4, 3), nullptr, [&](const JhipState& st) {
      if (st.t != 100 && st.t != 400) return;
      double m = 0;
      for (const Mat& z : st.z) m += squared_frobenius_norm(z - zstar) / 5;
      (st.t == 100 ? mse100 : mse400) += m / seeds;
    });
  }
  CHECK(mse400 <= 0.5 * mse100);
}

TEST_CASE("divergence guard and determinism across workers") {
  auto inst = random_jhip_instance(5, 4, 3, 9);
  auto mode = JhipMode::deterministic(inst.h, inst.j);
  auto w = build_ring(5, 0.5);
  try {
    jhip_run(mode, w, 2000, StepSchedule::constant(10.0 / inst.l_max), zeros(5, 4, 3));
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Divergence);
  }
  auto smode = noisy_mode(inst, 0.1, 5);
  ThreadPool pool(8);
  auto a = jhip_run(smode, w, 50, default_jhip_schedule(inst.l_max, true), zeros(5, 4, 3));
  auto b = jhip_run(smode, w, 50, default_jhip_schedule(inst.l_max, true), zeros(5, 4, 3), &pool);
  for (std::size_t i = 0; i < 5; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("schedules") {
  auto c = default_jhip_schedule(4.0, false);
  CHECK(c.at(0) == 0.25);
  CHECK(c.at(1000) == 0.25);
  auto d = default_jhip_schedule(4.0, true);
  CHECK(d.at(0) == 0.25);
  CHECK(d.at(20) == doctest::Approx(0.125));
  CHECK_THROWS_AS(StepSchedule::constant(0.0).validate("x"), Error);
}
