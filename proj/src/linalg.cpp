#include "dbo/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dbo/error.hpp"
#include "dbo/kernels.hpp"

namespace dbo {
namespace {

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) fail(ErrorKind::DimMismatch, std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b));
}

}  // namespace

void Vec::fill(double v) { std::fill(d_.begin(), d_.end(), v); }

bool Vec::all_finite() const noexcept {
  return std::all_of(d_.begin(), d_.end(), [](double v) { return std::isfinite(v); });
}

Vec& Vec::operator+=(const Vec& o) { return axpy(1.0, o); }
Vec& Vec::operator-=(const Vec& o) { return axpy(-1.0, o); }

Vec& Vec::operator*=(double a) {
  kernels::scal(a, d_.data(), d_.size());
  return *this;
}

Vec& Vec::axpy(double a, const Vec& x) {
  check_same(size(), x.size(), "Vec::axpy");
  kernels::axpy(a, x.data(), d_.data(), d_.size());
  return *this;
}

Vec operator+(Vec a, const Vec& b) { return a += b; }
Vec operator-(Vec a, const Vec& b) { return a -= b; }
Vec operator*(double a, Vec x) { return x *= a; }
Vec operator-(Vec a) { return a *= -1.0; }

double dot(const Vec& a, const Vec& b) {
  check_same(a.size(), b.size(), "dot");
  return kernels::dot(a.data(), b.data(), a.size());
}

double squared_norm(const Vec& a) { return kernels::dot(a.data(), a.data(), a.size()); }
double norm(const Vec& a) { return std::sqrt(squared_norm(a)); }

double max_abs(const Vec& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> row_major)
    : rows_(rows), cols_(cols), d_(std::move(row_major)) {
  check_same(d_.size(), rows * cols, "Mat storage");
}

Mat::Mat(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  d_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    check_same(r.size(), cols_, "Mat initializer row");
    d_.insert(d_.end(), r.begin(), r.end());
  }
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::diag(const Vec& d) {
  Mat m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

Mat Mat::from_columns(std::span<const Vec> columns) {
  if (columns.empty()) return {};
  Mat m(columns.front().size(), columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) m.set_col(c, columns[c]);
  return m;
}

Vec Mat::col(std::size_t c) const {
  Vec v(rows_);
  for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
  return v;
}

void Mat::set_col(std::size_t c, const Vec& v) {
  check_same(v.size(), rows_, "Mat::set_col");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
}

Mat Mat::transpose() const {
  Mat t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

void Mat::fill(double v) { std::fill(d_.begin(), d_.end(), v); }

bool Mat::all_finite() const noexcept {
  return std::all_of(d_.begin(), d_.end(), [](double v) { return std::isfinite(v); });
}

Mat& Mat::operator+=(const Mat& o) { return axpy(1.0, o); }
Mat& Mat::operator-=(const Mat& o) { return axpy(-1.0, o); }

Mat& Mat::operator*=(double a) {
  kernels::scal(a, d_.data(), d_.size());
  return *this;
}

Mat& Mat::axpy(double a, const Mat& x) {
  check_same(rows_, x.rows_, "Mat::axpy rows");
  check_same(cols_, x.cols_, "Mat::axpy cols");
  kernels::axpy(a, x.data(), d_.data(), d_.size());
  return *this;
}

Mat operator+(Mat a, const Mat& b) { return a += b; }
Mat operator-(Mat a, const Mat& b) { return a -= b; }
Mat operator*(double a, Mat x) { return x *= a; }

Vec matvec(const Mat& a, const Vec& x) {
  check_same(a.cols(), x.size(), "matvec");
  Vec y(a.rows());
  kernels::gemv(a.data(), a.rows(), a.cols(), x.data(), y.data());
  return y;
}

Vec matvec_t(const Mat& a, const Vec& x) {
  check_same(a.rows(), x.size(), "matvec_t");
  Vec y(a.cols());
  kernels::gemv_t(a.data(), a.rows(), a.cols(), x.data(), y.data());
  return y;
}

Mat matmul(const Mat& a, const Mat& b) {
  check_same(a.cols(), b.rows(), "matmul");
  Mat c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.data() + i * c.cols();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik != 0.0) kernels::axpy(aik, b.data() + k * b.cols(), ci, b.cols());
    }
  }
  return c;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  check_same(a.rows(), b.rows(), "matmul_tn");
  Mat c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* bk = b.data() + k * b.cols();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki != 0.0) kernels::axpy(aki, bk, c.data() + i * c.cols(), b.cols());
    }
  }
  return c;
}

double squared_frobenius_norm(const Mat& a) { return kernels::dot(a.data(), a.data(), a.size()); }
double frobenius_norm(const Mat& a) { return std::sqrt(squared_frobenius_norm(a)); }

double max_abs(const Mat& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i]));
  return m;
}

double asymmetry(const Mat& a) {
  check_same(a.rows(), a.cols(), "asymmetry (square)");
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j) - a(j, i)));
  return m;
}

}  // namespace dbo
