#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace promptkit {

using Vector = std::vector<double>;

/// Dense row-major float64 matrix. Entries are finite by construction.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  Matrix transposed() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// out = a * b
Matrix matmul(const Matrix& a, const Matrix& b);
/// out = a * b^T, i.e. out(i, j) = <a_i, b_j>.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
/// y = m * x
Vector matvec(const Matrix& m, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
bool all_finite(std::span<const double> v);

/// Row-wise softmax with max subtraction. Throws on an empty matrix.
Matrix softmax_rows(const Matrix& m);
/// Softmax of one logit vector in place.
void softmax_inplace(std::span<double> logits);

/// One level of a feature pyramid: height x width grid of dim-vectors, row-major.
struct FeatureLevel {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  FeatureLevel() = default;
  FeatureLevel(std::size_t h, std::size_t w, std::size_t d, double fill = 0.0);

  std::span<double> node(std::size_t y, std::size_t x) { return {data.data() + (y * width + x) * dim, dim}; }
  std::span<const double> node(std::size_t y, std::size_t x) const {
    return {data.data() + (y * width + x) * dim, dim};
  }
};

/// Bilinear interpolation at normalized (x, y) in [0,1]^2, (0,0) at the top-left node and (1,1) at
/// the bottom-right node. Out-of-range coordinates are clamped.
Vector bilinear_sample(const FeatureLevel& level, double x, double y);

using ScalarFn = std::function<double(std::span<const double>)>;

inline constexpr double kDefaultFiniteDiffEps = 1e-5;

/// Central differences (f(p + eps e_i) - f(p - eps e_i)) / (2 eps). Throws if an evaluation is
/// non-finite; the message names the coordinate.
Vector finite_diff_grad(const ScalarFn& f, std::span<const double> p, double eps = kDefaultFiniteDiffEps);

struct GradCheckReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::size_t n_params = 0;
  std::size_t worst_index = 0;
};

/// Relative error per entry uses max(|a|, |n|, 1e-8) as denominator; worst_index is the entry
/// with the largest relative error.
GradCheckReport compare_grads(std::span<const double> analytic, std::span<const double> numeric);

/// Merge two reports over disjoint parameter sets, keeping the worse of each error.
GradCheckReport merge_reports(const GradCheckReport& a, const GradCheckReport& b);

}  // namespace promptkit
