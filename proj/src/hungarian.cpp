// Min-cost assignment with a lexicographic tie-break.
//
// The rectangular problem is padded to square with zero-cost dummy rows/columns and solved with
// the O(n^3) shortest-augmenting-path method, which also yields optimal dual potentials. Every
// optimal assignment lives on the tight edges (zero reduced cost) of those duals, so the
// lexicographically smallest optimum is found by fixing rows greedily on the tight subgraph and
// repairing the matching with one alternating-path search per candidate.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "promptkit/set_losses.hpp"

namespace promptkit {

namespace {

struct Solved {
  std::vector<std::size_t> row_to_col;
  std::vector<double> u;
  std::vector<double> v;
};

// a is n x n, row-major.
Solved solve_square(const std::vector<double>& a, std::size_t n) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Solved s;
  s.row_to_col.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) s.row_to_col[p[j] - 1] = j - 1;
  s.u.assign(u.begin() + 1, u.end());
  s.v.assign(v.begin() + 1, v.end());
  return s;
}

class TightGraph {
 public:
  TightGraph(std::size_t n, std::vector<std::vector<std::size_t>> adj, std::vector<std::size_t> row_to_col)
      : n_(n), adj_(std::move(adj)), row_to_col_(std::move(row_to_col)), col_to_row_(n), fixed_(n, 0) {
    for (std::size_t r = 0; r < n_; ++r) col_to_row_[row_to_col_[r]] = r;
  }

  // Tries to force row -> col while keeping a perfect matching over the rows not yet fixed.
  bool try_fix(std::size_t row, std::size_t col) {
    const std::size_t old_col = row_to_col_[row];
    if (old_col == col) {
      fixed_[row] = 1;
      return true;
    }
    const std::size_t displaced = col_to_row_[col];
    if (fixed_[displaced]) return false;

    const auto saved_r2c = row_to_col_;
    const auto saved_c2r = col_to_row_;
    row_to_col_[row] = col;
    col_to_row_[col] = row;
    fixed_[row] = 1;
    // `displaced` must reach the freed column through an alternating path over unfixed rows.
    std::vector<char> visited(n_, 0);
    if (augment(displaced, old_col, visited)) return true;
    row_to_col_ = saved_r2c;
    col_to_row_ = saved_c2r;
    fixed_[row] = 0;
    return false;
  }

  const std::vector<std::size_t>& row_to_col() const { return row_to_col_; }

 private:
  bool augment(std::size_t r, std::size_t free_col, std::vector<char>& visited) {
    for (std::size_t c : adj_[r]) {
      if (visited[c]) continue;
      visited[c] = 1;
      if (c == free_col) {
        row_to_col_[r] = c;
        col_to_row_[c] = r;
        return true;
      }
      const std::size_t holder = col_to_row_[c];
      if (fixed_[holder] || holder == r) continue;
      if (augment(holder, free_col, visited)) {
        row_to_col_[r] = c;
        col_to_row_[c] = r;
        return true;
      }
    }
    return false;
  }

  std::size_t n_;
  std::vector<std::vector<std::size_t>> adj_;
  std::vector<std::size_t> row_to_col_;
  std::vector<std::size_t> col_to_row_;
  std::vector<char> fixed_;
};

}  // namespace

std::size_t Assignment::matched() const {
  return static_cast<std::size_t>(std::count_if(row_to_col.begin(), row_to_col.end(),
                                                [](const auto& c) { return c.has_value(); }));
}

Assignment hungarian(const Matrix& costs) {
  if (costs.empty()) throw std::invalid_argument("hungarian: cost matrix must have at least one row and column");
  if (!all_finite(costs.data())) throw std::invalid_argument("hungarian: non-finite cost entry");

  const std::size_t rows = costs.rows();
  const std::size_t cols = costs.cols();
  const std::size_t n = std::max(rows, cols);
  std::vector<double> a(n * n, 0.0);
  double scale = 1.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      a[r * n + c] = costs(r, c);
      scale = std::max(scale, std::abs(costs(r, c)));
    }

  const Solved s = solve_square(a, n);

  const double tol = 1e-12 * scale * static_cast<double>(n);
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      if (a[r * n + c] - s.u[r] - s.v[c] <= tol || s.row_to_col[r] == c) adj[r].push_back(c);

  TightGraph graph(n, adj, s.row_to_col);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c : adj[r]) {
      if (graph.try_fix(r, c)) break;
    }
  }

  Assignment out;
  out.row_to_col.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t c = graph.row_to_col()[r];
    if (c < cols) {
      out.row_to_col[r] = c;
      out.total_cost += costs(r, c);
    }
  }
  return out;
}

}  // namespace promptkit
