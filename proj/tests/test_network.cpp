#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "dbo/error.hpp"
#include "dbo/network.hpp"
#include "dbo/numerics.hpp"
#include "test_support.hpp"

using namespace dbo;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::IoError;
}

Mat averaging(std::size_t n) { return Mat(n, n, 1.0 / static_cast<double>(n)); }

}  // namespace

TEST_CASE("build_ring") {
  auto w = build_ring(4, 0.5);
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> row(w.w().row(i).begin(), w.w().row(i).end());
    std::sort(row.begin(), row.end());
    CHECK(row == std::vector<double>{0, 0.25, 0.25, 0.5});
  }
  CHECK(w.rho() == doctest::Approx(0.5).epsilon(1e-12));

  auto w3 = build_ring(3, 0.4);
  CHECK(w3(0, 0) == doctest::Approx(0.4));
  CHECK(w3(0, 1) == doctest::Approx(0.3));
  CHECK(w3(0, 2) == doctest::Approx(0.3));

  for (std::size_t n : {3u, 5u, 8u, 20u, 31u}) {
    for (double a : {0.1, 0.33, 0.4, 0.5, 0.9}) {
      auto wr = build_ring(n, a);
      double expected = 0;
      for (std::size_t j = 1; j < n; ++j)
        expected = std::max(expected, std::abs(a + (1 - a) * std::cos(2 * std::numbers::pi * j / n)));
      CHECK(std::abs(wr.rho() - expected) <= 1e-9);
      const auto& ev = wr.eigenvalues();
      CHECK(std::abs(ev.front() - 1.0) <= 1e-10);
      CHECK(ev[1] < 1.0 - 1e-10);
      CHECK(ev.back() > -1.0);
    }
  }
  auto near_identity = build_ring(6, 0.999999);
  CHECK(near_identity.rho() > 0.999);
  CHECK(kind_of([] { build_ring(2, 0.5); }) == ErrorKind::BadParameter);
  CHECK(kind_of([] { build_ring(5, 1.0); }) == ErrorKind::BadParameter);
  CHECK(kind_of([] { build_ring(5, 0.0); }) == ErrorKind::BadParameter);
}

TEST_CASE("build_from_matrix") {
  CHECK(kind_of([] { build_from_matrix(Mat::identity(3)); }) == ErrorKind::NotContractive);
  auto avg = build_from_matrix(averaging(5));
  CHECK(avg.rho() <= 1e-12);
  CHECK_NOTHROW(build_from_matrix(build_ring(20, 0.33).w()));
  CHECK(kind_of([] { build_from_matrix(Mat{{0.5, 0.5}, {0.4, 0.6}}); }) == ErrorKind::NotSymmetric);
  CHECK(kind_of([] { build_from_matrix(Mat{{0.5, 0.4}, {0.4, 0.5}}); }) == ErrorKind::NotDoublyStochastic);
  CHECK(kind_of([] { build_from_matrix(Mat{{1.5, -0.5}, {-0.5, 1.5}}); }) == ErrorKind::NotDoublyStochastic);
}

TEST_CASE("weight matrix CSV loading") {
  auto dir = std::filesystem::temp_directory_path() / "dbo_test_network";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "w.csv");
    out << "0.5,0.25,0,0.25\n0.25,0.5,0.25,0\n0,0.25,0.5,0.25\n0.25,0,0.25,0.5\n";
  }
  auto w = load_weight_matrix_csv(dir / "w.csv");
  CHECK(w.n() == 4);
  CHECK(w.rho() == doctest::Approx(0.5));
  {
    std::ofstream out(dir / "bad.csv");
    out << "0.5,abc\n0.5,0.5\n";
  }
  CHECK(kind_of([&] { load_weight_matrix_csv(dir / "bad.csv"); }) == ErrorKind::ParseError);
  CHECK(kind_of([&] { load_weight_matrix_csv(dir / "missing.csv"); }) == ErrorKind::IoError);
}

TEST_CASE("mix") {
  auto w = build_ring(4, 0.5);
  SUBCASE("consensus fixed point") {
    Vec c{1.5, -2.0, 3.0};
    std::vector<Vec> xs(4, c);
    for (const auto& out : mix(w, xs)) CHECK(out == c);
  }
  SUBCASE("averaging matrix returns the mean") {
    auto avg = build_from_matrix(averaging(4));
    std::mt19937_64 rng(1);
    Mat cols = testing_support::random_mat(3, 4, rng);
    Mat out = mix(avg, cols);
    for (std::size_t r = 0; r < 3; ++r) {
      double mean = 0;
      for (std::size_t c = 0; c < 4; ++c) mean += cols(r, c) / 4;
      for (std::size_t c = 0; c < 4; ++c) CHECK(out(r, c) == doctest::Approx(mean).epsilon(1e-14));
    }
  }
  SUBCASE("hand multiplied product") {
    Mat cols{{1, 2, 3, 4}, {0, 1, 0, -1}, {2, 2, 2, 6}};
    Mat out = mix(w, cols);
    Mat expected{{2.0, 2.0, 3.0, 3.0}, {0.0, 0.5, 0.0, -0.5}, {3.0, 2.0, 3.0, 4.0}};
    CHECK(frobenius_norm(out - expected) <= 1e-14);
    CHECK_THROWS_AS(mix(w, Mat(3, 5)), Error);
  }
  SUBCASE("mean preservation and contraction") {
    std::mt19937_64 rng(2);
    for (std::size_t n : {5u, 20u, 100u}) {
      auto wr = build_ring(n, 0.4);
      std::vector<Vec> xs;
      for (std::size_t i = 0; i < n; ++i) xs.push_back(testing_support::random_vec(7, rng, 10.0));
      auto ys = mix(wr, xs);
      Vec mx(7), my(7);
      for (std::size_t i = 0; i < n; ++i) {
        mx.axpy(1.0 / n, xs[i]);
        my.axpy(1.0 / n, ys[i]);
      }
      CHECK(max_abs(mx - my) <= 1e-13);
      double dx = 0, dy = 0;
      for (std::size_t i = 0; i < n; ++i) {
        dx += squared_norm(xs[i] - mx);
        dy += squared_norm(ys[i] - my);
      }
      CHECK(std::sqrt(dy) <= wr.rho() * std::sqrt(dx) + 1e-12);
    }
  }
  SUBCASE("matrix form") {
    std::mt19937_64 rng(3);
    std::vector<Mat> zs;
    for (int i = 0; i < 4; ++i) zs.push_back(testing_support::random_mat(2, 3, rng));
    auto out = mix(w, zs);
    Mat expect = 0.5 * zs[1] + 0.25 * zs[0] + 0.25 * zs[2];
    CHECK(frobenius_norm(out[1] - expect) <= 1e-14);
  }
}

TEST_CASE("mixing contraction") {
  auto avg = build_from_matrix(averaging(6));
  for (double v : mixing_contraction_check(avg, 5)) CHECK(v <= 1e-12);
  auto w = build_ring(4, 0.5);
  auto c = mixing_contraction_check(w, 2);
  CHECK(c[0] == doctest::Approx(0.5));
  CHECK(c[1] == doctest::Approx(0.25));
  for (double a : {0.4, 0.33}) {
    auto wr = build_ring(20, a);
    auto seq = mixing_contraction_check(wr, 50);
    for (std::size_t k = 0; k < seq.size(); ++k) {
      CHECK(seq[k] <= std::pow(wr.rho(), k + 1) + 1e-10);
      if (k > 0) CHECK(seq[k] <= seq[k - 1] + 1e-12);
    }
  }
  auto t = trivial_network();
  CHECK(t.n() == 1);
  CHECK(t.rho() == 0.0);
}

TEST_CASE("tracking step factor follows the smallest mixing eigenvalue") {
  CHECK(tracking_step_factor(build_ring(4, 0.5)) == doctest::Approx(0.45));
  CHECK(tracking_step_factor(build_ring(5, 0.9)) == 1.0);
  CHECK(tracking_step_factor(trivial_network()) == 1.0);
  const double lmin = 0.4 - 0.6;  // ring of 4 with a = 0.4
  CHECK(tracking_step_factor(build_ring(4, 0.4)) == doctest::Approx(0.45 * (1 + lmin) * (1 + lmin)));
}
