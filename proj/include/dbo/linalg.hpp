#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace dbo {

/// Dense column vector of doubles.
class Vec {
 public:
  Vec() = default;
  explicit Vec(std::size_t n, double value = 0.0) : d_(n, value) {}
  Vec(std::initializer_list<double> values) : d_(values) {}
  explicit Vec(std::vector<double> values) : d_(std::move(values)) {}

  std::size_t size() const noexcept { return d_.size(); }
  bool empty() const noexcept { return d_.empty(); }
  double* data() noexcept { return d_.data(); }
  const double* data() const noexcept { return d_.data(); }
  double& operator[](std::size_t i) noexcept { return d_[i]; }
  double operator[](std::size_t i) const noexcept { return d_[i]; }
  auto begin() noexcept { return d_.begin(); }
  auto end() noexcept { return d_.end(); }
  auto begin() const noexcept { return d_.begin(); }
  auto end() const noexcept { return d_.end(); }
  std::span<double> span() noexcept { return d_; }
  std::span<const double> span() const noexcept { return d_; }
  const std::vector<double>& values() const noexcept { return d_; }

  void fill(double v);
  bool all_finite() const noexcept;

  Vec& operator+=(const Vec& o);
  Vec& operator-=(const Vec& o);
  Vec& operator*=(double a);
  /// this += a * x
  Vec& axpy(double a, const Vec& x);

  friend bool operator==(const Vec&, const Vec&) = default;

 private:
  std::vector<double> d_;
};

Vec operator+(Vec a, const Vec& b);
Vec operator-(Vec a, const Vec& b);
Vec operator*(double a, Vec x);
Vec operator-(Vec a);

double dot(const Vec& a, const Vec& b);
double norm(const Vec& a);
double squared_norm(const Vec& a);
double max_abs(const Vec& a);

/// Dense row-major matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double value = 0.0)
      : rows_(rows), cols_(cols), d_(rows * cols, value) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> row_major);
  Mat(std::initializer_list<std::initializer_list<double>> rows);

  static Mat identity(std::size_t n);
  static Mat diag(const Vec& d);
  /// Matrix whose columns are the given vectors.
  static Mat from_columns(std::span<const Vec> columns);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return d_.size(); }
  double* data() noexcept { return d_.data(); }
  const double* data() const noexcept { return d_.data(); }
  double& operator()(std::size_t r, std::size_t c) noexcept { return d_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return d_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) noexcept { return {d_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {d_.data() + r * cols_, cols_}; }
  Vec col(std::size_t c) const;
  void set_col(std::size_t c, const Vec& v);

  Mat transpose() const;
  void fill(double v);
  bool all_finite() const noexcept;

  Mat& operator+=(const Mat& o);
  Mat& operator-=(const Mat& o);
  Mat& operator*=(double a);
  Mat& axpy(double a, const Mat& x);

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> d_;
};

Mat operator+(Mat a, const Mat& b);
Mat operator-(Mat a, const Mat& b);
Mat operator*(double a, Mat x);

/// A x
Vec matvec(const Mat& a, const Vec& x);
/// A^T x
Vec matvec_t(const Mat& a, const Vec& x);
Mat matmul(const Mat& a, const Mat& b);
/// A^T B without forming the transpose.
Mat matmul_tn(const Mat& a, const Mat& b);

double frobenius_norm(const Mat& a);
double squared_frobenius_norm(const Mat& a);
double max_abs(const Mat& a);
/// max |a - a^T|
double asymmetry(const Mat& a);

}  // namespace dbo
