#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "promptkit/numeric.hpp"
#include "promptkit/prompt_encoding.hpp"

namespace promptkit {

/// Similarity of each of N queries to one prompt.
struct QueryScores {
  Vector values;
  PromptKind prompt_kind = PromptKind::text;

  std::size_t size() const { return values.size(); }
};

struct TauResult {
  double tau = 0.0;
  std::size_t concordant = 0;
  std::size_t discordant = 0;
  std::size_t n = 0;
};

/// Kendall tau-a: (P_c - P_d) / (N (N - 1) / 2). A pair tied in either list counts as neither
/// concordant nor discordant, and the denominator is not tie-corrected. O(N^2).
TauResult kendall_tau(std::span<const double> a, std::span<const double> b);
inline TauResult kendall_tau(const QueryScores& a, const QueryScores& b) { return kendall_tau(a.values, b.values); }

struct OrderLossResult {
  double loss = 0.0;
  Vector grad_a;
  Vector grad_b;
};

/// tanh surrogate of -tau:
///   loss = -sum_{i>j} tanh(a_i - a_j) tanh(b_i - b_j) / (N (N - 1) / 2)
/// with analytic gradients for both score lists. The loss lies in [-1, 1].
OrderLossResult order_loss(std::span<const double> a, std::span<const double> b);
inline OrderLossResult order_loss(const QueryScores& text, const QueryScores& visual) {
  return order_loss(text.values, visual.values);
}

/// -order_loss(scale * a, scale * b). Tends to kendall_tau(a, b) as scale grows. Throws when
/// either list has ties.
double soft_tau_convergence(std::span<const double> a, std::span<const double> b, double scale);

inline constexpr double kDefaultSelectionAlpha = 0.5;

/// Indices of the k largest alpha * text + (1 - alpha) * visual scores, sorted by descending
/// combined score with ties going to the lower index.
std::vector<std::size_t> select_queries(std::span<const double> text_scores, std::span<const double> visual_scores,
                                        std::size_t k, double alpha = kDefaultSelectionAlpha);

struct OrderDescentResult {
  Vector text_scores;
  Vector visual_scores;
  std::size_t iterations = 0;
  double initial_tau = 0.0;
  double final_tau = 0.0;
  double final_loss = 0.0;
};

/// Plain gradient descent on order_loss over both score lists. Stops once the exact tau reaches
/// target_tau or after max_iters steps.
OrderDescentResult descend_order_loss(Vector text_scores, Vector visual_scores, double step, std::size_t max_iters,
                                      double target_tau = 1.0);

}  // namespace promptkit
