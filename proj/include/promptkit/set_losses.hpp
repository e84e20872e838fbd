#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "promptkit/alignment.hpp"
#include "promptkit/box.hpp"
#include "promptkit/numeric.hpp"

namespace promptkit {

// ---------------------------------------------------------------------------
// Box losses

double iou(const BoxXYXY& a, const BoxXYXY& b);

/// IoU minus the enclosing box's excess area fraction. Falls back to IoU when the enclosing box
/// has zero area.
double generalized_iou(const BoxXYXY& a, const BoxXYXY& b);

struct BoxLoss {
  double loss = 0.0;
  /// d loss / d (x1, y1, x2, y2) of the prediction.
  std::array<double, 4> grad{};
};

/// loss = 1 - GIoU(pred, gt). Subgradients at coordinate ties take the branch owned by gt.
BoxLoss giou_loss(const BoxXYXY& pred, const BoxXYXY& gt);

/// Mean absolute coordinate difference; subgradient 0 where a coordinate matches.
BoxLoss l1_box_loss(const BoxXYXY& pred, const BoxXYXY& gt);

// ---------------------------------------------------------------------------
// Mask losses

struct MaskGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  MaskGrid() = default;
  MaskGrid(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}
  MaskGrid(std::size_t h, std::size_t w, std::vector<double> v);

  std::size_t size() const { return values.size(); }
};

struct MaskLoss {
  double loss = 0.0;
  std::vector<double> grad;
};

inline constexpr double kDefaultDiceEps = 1.0;
inline constexpr double kBceClamp = 1e-7;

/// 1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps).
MaskLoss dice_loss(const MaskGrid& pred, const MaskGrid& gt, double eps = kDefaultDiceEps);

/// Mean binary cross-entropy, predictions clamped to [1e-7, 1 - 1e-7]. Clamped pixels get zero
/// gradient.
MaskLoss bce_mask_loss(const MaskGrid& pred, const MaskGrid& gt);

// ---------------------------------------------------------------------------
// Assignment

/// Result of a min-cost assignment. row_to_col[i] is nullopt for rows left unassigned when the
/// matrix has more rows than columns.
struct Assignment {
  std::vector<std::optional<std::size_t>> row_to_col;
  double total_cost = 0.0;

  std::size_t matched() const;
  bool operator==(const Assignment&) const = default;
};

/// Minimum-total-cost assignment of min(rows, cols) pairs. Among optimal assignments the
/// lexicographically smallest row_to_col is returned, with "unassigned" ordered after every
/// column. Throws on an empty matrix or non-finite entry.
Assignment hungarian(const Matrix& costs);

// ---------------------------------------------------------------------------
// Composite objective

struct Prediction {
  BoxXYXY box;
  Vector embedding;
  std::optional<MaskGrid> mask;
};

struct Target {
  BoxXYXY box;
  /// Embedding of the prompt the target belongs to.
  Vector prompt_embedding;
  std::optional<MaskGrid> mask;
};

struct LossWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  double bce = 1.0;
  double dice = 1.0;
  double align = 1.0;
  double order = 1.0;

  /// Plain unweighted sum of every term.
  static LossWeights unit() { return {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0}; }
};

enum class TrainingStage { text_only, joint };

std::string_view to_string(TrainingStage stage);
TrainingStage parse_training_stage(std::string_view name);

/// Component values after weighting. The denoising term is not part of this objective.
struct LossBreakdown {
  double cls = 0.0;
  double bbox = 0.0;
  double mask = 0.0;
  double align = 0.0;
  double order = 0.0;
  double total = 0.0;
};

struct OrderInputs {
  Vector text_scores;
  Vector visual_scores;
};

struct AlignInputs {
  Matrix visual;
  Matrix text;
  double temperature = kDefaultAlignTemperature;
};

struct TotalLossResult {
  LossBreakdown breakdown;
  Assignment matching;
  /// Present when align inputs were given. In the text_only stage grad_visual is zero.
  std::optional<AlignLossResult> align;
};

/// Classification similarity between a prediction embedding and a prompt embedding, mapped to a
/// cost in [0, 1] as (1 - cos) / 2.
double classification_cost(std::span<const double> pred_embedding, std::span<const double> prompt_embedding);

/// Matching cost per (pred, target): w_cls * cls_cost + w_l1 * L1 + w_giou * (1 - GIoU).
Matrix matching_costs(const std::vector<Prediction>& preds, const std::vector<Target>& targets,
                      const LossWeights& weights);

struct LossInputs {
  std::vector<Prediction> preds;
  std::vector<Target> targets;
  /// Every prompt of the image. Unmatched predictions are pushed toward zero similarity with
  /// these. When empty, the targets' prompt embeddings are used.
  std::vector<Vector> prompts;
  std::optional<AlignInputs> align;
  std::optional<OrderInputs> order;
};

/// Hungarian-matches predictions to targets on matching_costs and sums weighted components:
///   cls   matched: (1 - cos(pred, prompt)) / 2; unmatched: max(0, max_p cos(pred, p)) / 2
///   bbox  L1 + GIoU over matched pairs
///   mask  BCE + dice over matched pairs that both carry masks
///   align symmetric contrastive loss of the align inputs
///   order order_loss of the order inputs
/// The text_only stage drops the order term and zeroes the align gradient w.r.t. visual prompts.
TotalLossResult match_and_total_loss(const LossInputs& inputs, const LossWeights& weights, TrainingStage stage);

TotalLossResult match_and_total_loss(const std::vector<Prediction>& preds, const std::vector<Target>& targets,
                                     const LossWeights& weights, TrainingStage stage);

/// Query budget of the two-stage decoder.
inline constexpr std::size_t kDefaultDecoderQueries = 900;

}  // namespace promptkit
