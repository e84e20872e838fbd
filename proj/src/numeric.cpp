#include "promptkit/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace promptkit {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) + " != " +
                                std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (!all_finite(data_)) throw std::invalid_argument("Matrix: non-finite entry");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  if (!all_finite(data_)) throw std::invalid_argument("Matrix: non-finite entry");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw std::invalid_argument("Matrix::from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Matrix(rows.size(), cols, std::move(data));
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_transposed: width mismatch");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

Vector matvec(const Matrix& m, std::span<const double> x) {
  if (m.cols() != x.size()) throw std::invalid_argument("matvec: dimension mismatch");
  Vector y(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) y[i] = dot(m.row(i), x);
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void softmax_inplace(std::span<double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty row");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& x : logits) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : logits) x /= sum;
}

Matrix softmax_rows(const Matrix& m) {
  if (m.empty()) throw std::invalid_argument("softmax_rows: empty matrix");
  if (!all_finite(m.data())) throw std::invalid_argument("softmax_rows: non-finite input");
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  return out;
}

FeatureLevel::FeatureLevel(std::size_t h, std::size_t w, std::size_t d, double fill)
    : height(h), width(w), dim(d), data(h * w * d, fill) {}

Vector bilinear_sample(const FeatureLevel& level, double x, double y) {
  if (level.height == 0 || level.width == 0) throw std::invalid_argument("bilinear_sample: empty level");
  x = std::clamp(x, 0.0, 1.0);
  y = std::clamp(y, 0.0, 1.0);
  // Snap coordinates within rounding of a node so on-grid reads are exact.
  const auto snap = [](double g) { return std::abs(g - std::round(g)) < 1e-9 ? std::round(g) : g; };
  const double gx = snap(x * static_cast<double>(level.width - 1));
  const double gy = snap(y * static_cast<double>(level.height - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(gx));
  const auto y0 = static_cast<std::size_t>(std::floor(gy));
  const std::size_t x1 = std::min(x0 + 1, level.width - 1);
  const std::size_t y1 = std::min(y0 + 1, level.height - 1);
  const double fx = gx - static_cast<double>(x0);
  const double fy = gy - static_cast<double>(y0);

  const double w00 = (1.0 - fx) * (1.0 - fy);
  const double w01 = fx * (1.0 - fy);
  const double w10 = (1.0 - fx) * fy;
  const double w11 = fx * fy;
  const auto n00 = level.node(y0, x0);
  const auto n01 = level.node(y0, x1);
  const auto n10 = level.node(y1, x0);
  const auto n11 = level.node(y1, x1);

  Vector out(level.dim);
  for (std::size_t k = 0; k < level.dim; ++k)
    out[k] = w00 * n00[k] + w01 * n01[k] + w10 * n10[k] + w11 * n11[k];
  return out;
}

Vector finite_diff_grad(const ScalarFn& f, std::span<const double> p, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  Vector x(p.begin(), p.end());
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double fp = f(x);
    x[i] = orig - eps;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::domain_error("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

GradCheckReport compare_grads(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) {
    throw std::invalid_argument("compare_grads: length mismatch (" + std::to_string(analytic.size()) + " vs " +
                                std::to_string(numeric.size()) + ")");
  }
  GradCheckReport rep;
  rep.n_params = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double abs_err = std::abs(analytic[i] - numeric[i]);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
    const double rel_err = abs_err / denom;
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    if (rel_err > rep.max_rel_err) {
      rep.max_rel_err = rel_err;
      rep.worst_index = i;
    }
  }
  return rep;
}

GradCheckReport merge_reports(const GradCheckReport& a, const GradCheckReport& b) {
  GradCheckReport out;
  out.n_params = a.n_params + b.n_params;
  out.max_abs_err = std::max(a.max_abs_err, b.max_abs_err);
  if (b.max_rel_err > a.max_rel_err) {
    out.max_rel_err = b.max_rel_err;
    out.worst_index = a.n_params + b.worst_index;
  } else {
    out.max_rel_err = a.max_rel_err;
    out.worst_index = a.worst_index;
  }
  return out;
}

}  // namespace promptkit
