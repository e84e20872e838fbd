#include "promptkit/order_align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace promptkit {

namespace {

int sgn(double x) { return (x > 0.0) - (x < 0.0); }

void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
  if (a.size() < 2) throw std::invalid_argument(std::string(what) + ": need at least 2 scores");
  if (!all_finite(a) || !all_finite(b)) throw std::invalid_argument(std::string(what) + ": non-finite score");
}

double pair_count(std::size_t n) { return 0.5 * static_cast<double>(n) * static_cast<double>(n - 1); }

bool has_ties(std::span<const double> v) {
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end());
  return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

}  // namespace

TauResult kendall_tau(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b, "kendall_tau");
  TauResult r;
  r.n = a.size();
  for (std::size_t i = 1; i < r.n; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const int s = sgn(a[i] - a[j]) * sgn(b[i] - b[j]);
      if (s > 0) ++r.concordant;
      if (s < 0) ++r.discordant;
    }
  r.tau = (static_cast<double>(r.concordant) - static_cast<double>(r.discordant)) / pair_count(r.n);
  return r;
}

OrderLossResult order_loss(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b, "order_loss");
  const std::size_t n = a.size();
  const double norm = pair_count(n);
  OrderLossResult r;
  r.grad_a.assign(n, 0.0);
  r.grad_b.assign(n, 0.0);
  double sum = 0.0;
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const double ta = std::tanh(a[i] - a[j]);
      const double tb = std::tanh(b[i] - b[j]);
      sum += ta * tb;
      const double ga = (1.0 - ta * ta) * tb;
      const double gb = (1.0 - tb * tb) * ta;
      r.grad_a[i] -= ga;
      r.grad_a[j] += ga;
      r.grad_b[i] -= gb;
      r.grad_b[j] += gb;
    }
  r.loss = -sum / norm;
  for (std::size_t i = 0; i < n; ++i) {
    r.grad_a[i] /= norm;
    r.grad_b[i] /= norm;
  }
  return r;
}

double soft_tau_convergence(std::span<const double> a, std::span<const double> b, double scale) {
  check_pair(a, b, "soft_tau_convergence");
  if (has_ties(a) || has_ties(b)) throw std::invalid_argument("soft_tau_convergence: score lists must be tie-free");
  Vector sa(a.begin(), a.end()), sb(b.begin(), b.end());
  for (double& x : sa) x *= scale;
  for (double& x : sb) x *= scale;
  return -order_loss(sa, sb).loss + 0.0;
}

std::vector<std::size_t> select_queries(std::span<const double> text_scores, std::span<const double> visual_scores,
                                        std::size_t k, double alpha) {
  if (text_scores.size() != visual_scores.size()) throw std::invalid_argument("select_queries: length mismatch");
  if (k > text_scores.size()) {
    throw std::invalid_argument("select_queries: k = " + std::to_string(k) + " exceeds query count " +
                                std::to_string(text_scores.size()));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("select_queries: alpha must lie in [0, 1]");
  Vector combined(text_scores.size());
  for (std::size_t i = 0; i < combined.size(); ++i)
    combined[i] = alpha * text_scores[i] + (1.0 - alpha) * visual_scores[i];
  std::vector<std::size_t> idx(combined.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t x, std::size_t y) {
                      if (combined[x] != combined[y]) return combined[x] > combined[y];
                      return x < y;
                    });
  idx.resize(k);
  return idx;
}

OrderDescentResult descend_order_loss(Vector text_scores, Vector visual_scores, double step, std::size_t max_iters,
                                      double target_tau) {
  OrderDescentResult r;
  r.initial_tau = kendall_tau(text_scores, visual_scores).tau;
  r.final_tau = r.initial_tau;
  while (r.iterations < max_iters && r.final_tau < target_tau) {
    const OrderLossResult g = order_loss(text_scores, visual_scores);
    for (std::size_t i = 0; i < text_scores.size(); ++i) {
      text_scores[i] -= step * g.grad_a[i];
      visual_scores[i] -= step * g.grad_b[i];
    }
    ++r.iterations;
    r.final_tau = kendall_tau(text_scores, visual_scores).tau;
  }
  r.final_loss = order_loss(text_scores, visual_scores).loss;
  r.text_scores = std::move(text_scores);
  r.visual_scores = std::move(visual_scores);
  return r;
}

}  // namespace promptkit
