#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "dbo/linalg.hpp"

namespace dbo {

/// Symmetric doubly stochastic mixing matrix with its cached contraction factor
/// rho = max(|lambda_2|, |lambda_n|) < 1. Immutable after construction.
class WeightMatrix {
 public:
  const Mat& w() const noexcept { return w_; }
  std::size_t n() const noexcept { return w_.rows(); }
  double rho() const noexcept { return rho_; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return w_(i, j); }
  /// Eigenvalues in descending order (lambda_1 = 1).
  const std::vector<double>& eigenvalues() const noexcept { return eigenvalues_; }

  friend WeightMatrix build_ring(std::size_t n, double a);
  friend WeightMatrix build_from_matrix(const Mat& m);

 private:
  WeightMatrix(Mat w, std::vector<double> eigenvalues);
  Mat w_;
  std::vector<double> eigenvalues_;
  double rho_ = 0.0;
};

/// Ring of n agents: w_ii = a, w_{i,i+-1} = (1-a)/2 with wraparound.
WeightMatrix build_ring(std::size_t n, double a);

/// Validates an arbitrary matrix (symmetric, nonnegative, rows and columns summing
/// to one within 1e-12, rho < 1 - 1e-10).
WeightMatrix build_from_matrix(const Mat& m);

/// Reads an n x n comma-separated matrix (no header) and validates it.
WeightMatrix load_weight_matrix_csv(const std::filesystem::path& path);

/// Single agent network W = (1); rho is defined as 0.
WeightMatrix trivial_network();

/// Fraction of 1/L usable as a constant gradient-tracking step on this network:
/// min(1, 0.9 (1 + lambda_min)^2 / 2). Larger steps make the non-consensus modes unstable.
double tracking_step_factor(const WeightMatrix& w);

/// out_i = sum_j w_ij in_j over agent vectors, summing j = 0..n-1 in index order.
std::vector<Vec> mix(const WeightMatrix& w, std::span<const Vec> agents);
std::vector<Mat> mix(const WeightMatrix& w, std::span<const Mat> agents);
/// Column form: columns (p x n) times W.
Mat mix(const WeightMatrix& w, const Mat& columns);

/// Spectral norms |W^k - J/n| for k = 1..k_max.
std::vector<double> mixing_contraction_check(const WeightMatrix& w, std::size_t k_max);

}  // namespace dbo
