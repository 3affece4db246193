#include "dbo/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "dbo/error.hpp"
#include "dbo/kernels.hpp"
#include "dbo/numerics.hpp"

namespace dbo {
namespace {

constexpr double kStochasticTol = 1e-12;
constexpr double kContractiveMargin = 1e-10;

double compute_rho(const std::vector<double>& ev) {
  if (ev.size() < 2) return 0.0;
  return std::max(std::abs(ev[1]), std::abs(ev.back()));
}

template <class T>
std::vector<T> mix_impl(const WeightMatrix& w, std::span<const T> agents) {
  const std::size_t n = w.n();
  require(agents.size() == n, ErrorKind::DimMismatch,
          "mix: expected " + std::to_string(n) + " agents, got " + std::to_string(agents.size()));
  std::vector<T> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    T acc = agents[i];
    acc.fill(0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double wij = w(i, j);
      if (wij == 0.0) continue;
      require(agents[j].size() == acc.size(), ErrorKind::DimMismatch, "mix: agent shapes differ");
      kernels::axpy(wij, agents[j].data(), acc.data(), acc.size());
    }
    out.push_back(std::move(acc));
  }
  return out;
}

}  // namespace

WeightMatrix::WeightMatrix(Mat w, std::vector<double> eigenvalues)
    : w_(std::move(w)), eigenvalues_(std::move(eigenvalues)), rho_(compute_rho(eigenvalues_)) {}

WeightMatrix build_ring(std::size_t n, double a) {
  require(n >= 3, ErrorKind::BadParameter, "ring needs n >= 3, got " + std::to_string(n));
  require(a > 0.0 && a < 1.0, ErrorKind::BadParameter, "ring weight a in (0,1)");
  Mat w(n, n);
  const double side = 0.5 * (1.0 - a);
  for (std::size_t i = 0; i < n; ++i) {
    w(i, i) = a;
    w(i, (i + 1) % n) += side;
    w(i, (i + n - 1) % n) += side;
  }
  auto ev = sym_eigenvalues(w);
  return WeightMatrix(std::move(w), std::move(ev));
}

WeightMatrix build_from_matrix(const Mat& m) {
  require(m.rows() == m.cols() && m.rows() > 0, ErrorKind::DimMismatch, "weight matrix must be square");
  require(m.all_finite(), ErrorKind::NotDoublyStochastic, "weight matrix has non-finite entries");
  const std::size_t n = m.rows();
  if (asymmetry(m) > kStochasticTol) fail(ErrorKind::NotSymmetric, "weight matrix is not symmetric");
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    double col = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (m(i, j) < 0.0) fail(ErrorKind::NotDoublyStochastic, "negative weight at row " + std::to_string(i));
      row += m(i, j);
      col += m(j, i);
    }
    if (std::abs(row - 1.0) > kStochasticTol || std::abs(col - 1.0) > kStochasticTol) {
      fail(ErrorKind::NotDoublyStochastic, "row/column " + std::to_string(i) + " does not sum to 1");
    }
  }
  auto ev = sym_eigenvalues(m);
  WeightMatrix w(m, std::move(ev));
  if (n > 1 && w.rho() >= 1.0 - kContractiveMargin) {
    fail(ErrorKind::NotContractive, "rho = " + std::to_string(w.rho()) + " is not below 1");
  }
  return w;
}

WeightMatrix load_weight_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open weight matrix " + path.string());
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail(ErrorKind::ParseError, path.string() + ":" + std::to_string(rows + 1) + ": bad number '" + cell + "'");
      }
      ++c;
    }
    if (rows == 0) cols = c;
    if (c != cols) fail(ErrorKind::ParseError, path.string() + ":" + std::to_string(rows + 1) + ": ragged row");
    ++rows;
  }
  if (rows != cols) fail(ErrorKind::ParseError, path.string() + ": matrix is not square");
  return build_from_matrix(Mat(rows, cols, std::move(values)));
}

WeightMatrix trivial_network() { return build_from_matrix(Mat{{1.0}}); }

double tracking_step_factor(const WeightMatrix& w) {
  const double lmin = w.eigenvalues().back();
  return std::min(1.0, 0.45 * (1.0 + lmin) * (1.0 + lmin));
}

std::vector<Vec> mix(const WeightMatrix& w, std::span<const Vec> agents) { return mix_impl(w, agents); }
std::vector<Mat> mix(const WeightMatrix& w, std::span<const Mat> agents) { return mix_impl(w, agents); }

Mat mix(const WeightMatrix& w, const Mat& columns) {
  require(columns.cols() == w.n(), ErrorKind::DimMismatch, "mix: column count differs from agent count");
  std::vector<Vec> cols;
  cols.reserve(columns.cols());
  for (std::size_t c = 0; c < columns.cols(); ++c) cols.push_back(columns.col(c));
  const auto mixed = mix_impl<Vec>(w, cols);
  return Mat::from_columns(mixed);
}

std::vector<double> mixing_contraction_check(const WeightMatrix& w, std::size_t k_max) {
  const std::size_t n = w.n();
  std::vector<double> out;
  out.reserve(k_max);
  Mat power = Mat::identity(n);
  const Mat avg(n, n, 1.0 / static_cast<double>(n));
  for (std::size_t k = 1; k <= k_max; ++k) {
    power = matmul(power, w.w());
    out.push_back(sym_spectral_norm(power - avg));
  }
  return out;
}

}  // namespace dbo
