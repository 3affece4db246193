#include "dbo/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dbo/error.hpp"

namespace dbo {
namespace {

constexpr double kCgBreakdown = 1e-14;

// Lower-triangular Cholesky factor, row-major.
Mat cholesky(const Mat& a) {
  require(a.rows() == a.cols(), ErrorKind::DimMismatch, "spd_solve: matrix must be square");
  const double scale = max_abs(a);
  if (asymmetry(a) > 1e-9 * scale) fail(ErrorKind::NotSPD, "spd_solve: matrix is not symmetric");
  const std::size_t n = a.rows();
  Mat l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) fail(ErrorKind::NotSPD, "spd_solve: non-positive pivot at " + std::to_string(j));
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

void cholesky_solve_inplace(const Mat& l, Vec& x) {
  const std::size_t n = l.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double s = x[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x[k];
    x[i] = s / l(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = x[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
    x[ii] = s / l(ii, ii);
  }
}

Vec solve_refined(const Mat& a, const Mat& l, const Vec& b) {
  Vec x = b;
  cholesky_solve_inplace(l, x);
  Vec r = b - matvec(a, x);
  cholesky_solve_inplace(l, r);
  x += r;
  return x;
}

}  // namespace

Mat spd_solve(const Mat& a, const Mat& b) {
  require(b.rows() == a.rows(), ErrorKind::DimMismatch, "spd_solve: rhs rows differ from matrix size");
  const Mat l = cholesky(a);
  Mat x(b.rows(), b.cols());
  for (std::size_t c = 0; c < b.cols(); ++c) x.set_col(c, solve_refined(a, l, b.col(c)));
  return x;
}

Vec spd_solve(const Mat& a, const Vec& b) {
  require(b.size() == a.rows(), ErrorKind::DimMismatch, "spd_solve: rhs size differs from matrix size");
  return solve_refined(a, cholesky(a), b);
}

std::vector<double> sym_eigenvalues(const Mat& a) {
  require(a.rows() == a.cols(), ErrorKind::DimMismatch, "sym_eigenvalues: matrix must be square");
  if (asymmetry(a) > 1e-9 * std::max(1.0, max_abs(a))) {
    fail(ErrorKind::NotSymmetric, "sym_eigenvalues: matrix is not symmetric");
  }
  const std::size_t n = a.rows();
  Mat m = a;
  // Symmetrize so round-off asymmetry cannot bias the rotations.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(i, j) = m(j, i) = 0.5 * (m(i, j) + m(j, i));

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += m(i, j) * m(i, j);
    if (off == 0.0) break;
    double diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) diag += m(i, i) * m(i, i);
    if (off <= 1e-32 * diag) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (apq == 0.0) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p);
          const double mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k);
          const double mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = m(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

double sym_spectral_norm(const Mat& a) {
  const auto ev = sym_eigenvalues(a);
  if (ev.empty()) return 0.0;
  return std::max(std::abs(ev.front()), std::abs(ev.back()));
}

double spectral_norm(const Mat& a) {
  if (a.size() == 0) return 0.0;
  const Mat gram = a.rows() <= a.cols() ? matmul(a, a.transpose()) : matmul_tn(a, a);
  return std::sqrt(std::max(0.0, sym_eigenvalues(gram).front()));
}

CgResult conjugate_gradient_run(const LinearOperator& hvp, const Vec& b, std::size_t n_steps, const Vec& v0) {
  require(v0.size() == b.size(), ErrorKind::DimMismatch, "conjugate_gradient: v0 and b differ in size");
  CgResult out{v0, 0, 0.0};
  Vec r = b - hvp(v0);
  require(r.size() == b.size(), ErrorKind::DimMismatch, "conjugate_gradient: operator output size");
  Vec p = r;
  double rr = squared_norm(r);
  const double stop = 1e-15 * norm(b);
  for (std::size_t k = 0; k < n_steps; ++k) {
    if (rr == 0.0 || std::sqrt(rr) <= stop) break;
    const Vec hp = hvp(p);
    const double curvature = dot(p, hp);
    if (curvature <= kCgBreakdown * squared_norm(p)) {
      fail(ErrorKind::BreakdownDetected, "conjugate_gradient: non-positive curvature at step " + std::to_string(k));
    }
    const double alpha = rr / curvature;
    out.v.axpy(alpha, p);
    r.axpy(-alpha, hp);
    ++out.steps;
    const double rr_next = squared_norm(r);
    p *= rr_next / rr;
    p += r;
    rr = rr_next;
  }
  out.residual_norm = std::sqrt(rr);
  return out;
}

}  // namespace dbo
