#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dbo/linalg.hpp"

namespace dbo {

/// Solves a X = b for symmetric positive definite a via Cholesky with one step of
/// iterative refinement. Throws NotSPD on an asymmetric input or a non-positive pivot.
Mat spd_solve(const Mat& a, const Mat& b);
Vec spd_solve(const Mat& a, const Vec& b);

/// Eigenvalues of a symmetric matrix in descending order (cyclic Jacobi).
std::vector<double> sym_eigenvalues(const Mat& a);

/// Largest |eigenvalue| of a symmetric matrix, i.e. its spectral norm.
double sym_spectral_norm(const Mat& a);

/// Largest singular value of an arbitrary matrix.
double spectral_norm(const Mat& a);

using LinearOperator = std::function<Vec(const Vec&)>;

struct CgResult {
  Vec v;
  std::size_t steps = 0;
  double residual_norm = 0.0;
};

/// Plain (unpreconditioned) conjugate gradient on H v = b from v0, run for at most
/// `n_steps` iterations. Stops early only once the residual is exactly resolved.
/// Throws BreakdownDetected when a search direction has p'Hp <= 1e-14 |p|^2.
CgResult conjugate_gradient_run(const LinearOperator& hvp, const Vec& b, std::size_t n_steps, const Vec& v0);

inline Vec conjugate_gradient(const LinearOperator& hvp, const Vec& b, std::size_t n_steps, const Vec& v0) {
  return conjugate_gradient_run(hvp, b, n_steps, v0).v;
}

}  // namespace dbo
