#include "promptkit/set_losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "promptkit/order_align.hpp"

namespace promptkit {

bool BoxXYXY::ordered() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x1 <= x2 && y1 <= y2;
}

bool BoxXYXY::valid() const {
  const auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  return ordered() && in_unit(x1) && in_unit(y1) && in_unit(x2) && in_unit(y2);
}

namespace {

double overlap(double a1, double a2, double b1, double b2) { return std::max(0.0, std::min(a2, b2) - std::max(a1, b1)); }

}  // namespace

double iou(const BoxXYXY& a, const BoxXYXY& b) {
  const double area_a = a.area();
  const double area_b = b.area();
  if (area_a <= 0.0 || area_b <= 0.0) return (area_a <= 0.0 && area_b <= 0.0 && a == b) ? 1.0 : 0.0;
  const double inter = overlap(a.x1, a.x2, b.x1, b.x2) * overlap(a.y1, a.y2, b.y1, b.y2);
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double generalized_iou(const BoxXYXY& a, const BoxXYXY& b) {
  const double base = iou(a, b);
  const double enclose = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) * (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  if (enclose <= 0.0) return base;
  const double inter = overlap(a.x1, a.x2, b.x1, b.x2) * overlap(a.y1, a.y2, b.y1, b.y2);
  const double uni = a.area() + b.area() - inter;
  return base - std::max(0.0, enclose - uni) / enclose;
}

BoxLoss giou_loss(const BoxXYXY& pred, const BoxXYXY& gt) {
  BoxLoss out;
  const double pw = pred.width(), ph = pred.height();
  const double area_p = pw * ph;
  const double area_g = gt.area();

  const double iw = overlap(pred.x1, pred.x2, gt.x1, gt.x2);
  const double ih = overlap(pred.y1, pred.y2, gt.y1, gt.y2);
  const double inter = iw * ih;
  const double uni = area_p + area_g - inter;
  const double cw = std::max(pred.x2, gt.x2) - std::min(pred.x1, gt.x1);
  const double ch = std::max(pred.y2, gt.y2) - std::min(pred.y1, gt.y1);
  const double enclose = cw * ch;

  out.loss = 1.0 - generalized_iou(pred, gt);
  // Degenerate configurations are flat pieces of the loss.
  if (area_p <= 0.0 || area_g <= 0.0 || uni <= 0.0 || enclose <= 0.0) return out;

  // d(area_p), d(inter), d(enclose) w.r.t. (x1, y1, x2, y2) of pred.
  const std::array<double, 4> d_area = {-ph, -pw, ph, pw};
  std::array<double, 4> d_inter{};
  if (iw > 0.0 && ih > 0.0) {
    d_inter[0] = pred.x1 > gt.x1 ? -ih : 0.0;
    d_inter[1] = pred.y1 > gt.y1 ? -iw : 0.0;
    d_inter[2] = pred.x2 < gt.x2 ? ih : 0.0;
    d_inter[3] = pred.y2 < gt.y2 ? iw : 0.0;
  }
  const std::array<double, 4> d_enclose = {
      pred.x1 < gt.x1 ? -ch : 0.0,
      pred.y1 < gt.y1 ? -cw : 0.0,
      pred.x2 > gt.x2 ? ch : 0.0,
      pred.y2 > gt.y2 ? cw : 0.0,
  };

  // loss = 2 - inter/union - union/enclose
  for (std::size_t k = 0; k < 4; ++k) {
    const double d_union = d_area[k] - d_inter[k];
    const double d_iou = (d_inter[k] * uni - inter * d_union) / (uni * uni);
    const double d_ratio = (d_union * enclose - uni * d_enclose[k]) / (enclose * enclose);
    out.grad[k] = -d_iou - d_ratio;
  }
  return out;
}

BoxLoss l1_box_loss(const BoxXYXY& pred, const BoxXYXY& gt) {
  BoxLoss out;
  const auto p = pred.to_array();
  const auto g = gt.to_array();
  for (std::size_t k = 0; k < 4; ++k) {
    const double d = p[k] - g[k];
    out.loss += std::abs(d) / 4.0;
    out.grad[k] = d > 0.0 ? 0.25 : (d < 0.0 ? -0.25 : 0.0);
  }
  return out;
}

MaskGrid::MaskGrid(std::size_t h, std::size_t w, std::vector<double> v) : height(h), width(w), values(std::move(v)) {
  if (values.size() != h * w) throw std::invalid_argument("MaskGrid: value count does not match dims");
}

namespace {

void check_masks(const MaskGrid& pred, const MaskGrid& gt, const char* what) {
  if (pred.height != gt.height || pred.width != gt.width || pred.values.size() != gt.values.size()) {
    throw std::invalid_argument(std::string(what) + ": mask dims differ (" + std::to_string(pred.height) + "x" +
                                std::to_string(pred.width) + " vs " + std::to_string(gt.height) + "x" +
                                std::to_string(gt.width) + ")");
  }
  if (pred.values.empty()) throw std::invalid_argument(std::string(what) + ": empty mask");
}

}  // namespace

MaskLoss dice_loss(const MaskGrid& pred, const MaskGrid& gt, double eps) {
  check_masks(pred, gt, "dice_loss");
  double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred.values[i] * gt.values[i];
    sum_p += pred.values[i];
    sum_g += gt.values[i];
  }
  const double num = 2.0 * inter + eps;
  const double den = sum_p + sum_g + eps;
  MaskLoss out;
  out.loss = 1.0 - num / den;
  out.grad.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out.grad[i] = -(2.0 * gt.values[i] * den - num) / (den * den);
  return out;
}

MaskLoss bce_mask_loss(const MaskGrid& pred, const MaskGrid& gt) {
  check_masks(pred, gt, "bce_mask_loss");
  const double n = static_cast<double>(pred.size());
  MaskLoss out;
  out.grad.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double raw = pred.values[i];
    const double p = std::clamp(raw, kBceClamp, 1.0 - kBceClamp);
    const double g = gt.values[i];
    out.loss -= (g * std::log(p) + (1.0 - g) * std::log(1.0 - p)) / n;
    const bool clamped = raw < kBceClamp || raw > 1.0 - kBceClamp;
    out.grad[i] = clamped ? 0.0 : (p - g) / (p * (1.0 - p) * n);
  }
  return out;
}

std::string_view to_string(TrainingStage stage) { return stage == TrainingStage::text_only ? "text_only" : "joint"; }

TrainingStage parse_training_stage(std::string_view name) {
  if (name == "text_only") return TrainingStage::text_only;
  if (name == "joint") return TrainingStage::joint;
  throw std::invalid_argument("unknown training stage: " + std::string(name));
}

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a), nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

}  // namespace

double classification_cost(std::span<const double> pred_embedding, std::span<const double> prompt_embedding) {
  return 0.5 * (1.0 - cosine(pred_embedding, prompt_embedding));
}

Matrix matching_costs(const std::vector<Prediction>& preds, const std::vector<Target>& targets,
                      const LossWeights& weights) {
  Matrix costs(preds.size(), targets.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < targets.size(); ++j) {
      costs(i, j) = weights.cls * classification_cost(preds[i].embedding, targets[j].prompt_embedding) +
                    weights.l1 * l1_box_loss(preds[i].box, targets[j].box).loss +
                    weights.giou * giou_loss(preds[i].box, targets[j].box).loss;
    }
  return costs;
}

TotalLossResult match_and_total_loss(const LossInputs& in, const LossWeights& weights, TrainingStage stage) {
  for (const auto& p : in.preds)
    if (!p.box.ordered()) throw std::invalid_argument("match_and_total_loss: prediction box is not ordered");
  for (const auto& t : in.targets)
    if (!t.box.ordered()) throw std::invalid_argument("match_and_total_loss: target box is not ordered");

  TotalLossResult out;
  auto& br = out.breakdown;
  out.matching.row_to_col.assign(in.preds.size(), std::nullopt);
  if (!in.preds.empty() && !in.targets.empty()) out.matching = hungarian(matching_costs(in.preds, in.targets, weights));

  std::vector<std::span<const double>> prompts;
  if (in.prompts.empty()) {
    for (const auto& t : in.targets) prompts.emplace_back(t.prompt_embedding);
  } else {
    for (const auto& p : in.prompts) prompts.emplace_back(p);
  }

  for (std::size_t i = 0; i < in.preds.size(); ++i) {
    const auto& pred = in.preds[i];
    const auto& col = out.matching.row_to_col[i];
    if (!col) {
      double sim = 0.0;
      for (const auto& p : prompts) sim = std::max(sim, cosine(pred.embedding, p));
      br.cls += weights.cls * 0.5 * sim;
      continue;
    }
    const auto& t = in.targets[*col];
    br.cls += weights.cls * classification_cost(pred.embedding, t.prompt_embedding);
    br.bbox += weights.l1 * l1_box_loss(pred.box, t.box).loss + weights.giou * giou_loss(pred.box, t.box).loss;
    if (pred.mask && t.mask) {
      br.mask += weights.bce * bce_mask_loss(*pred.mask, *t.mask).loss + weights.dice * dice_loss(*pred.mask, *t.mask).loss;
    }
  }

  if (in.align) {
    AlignLossResult a = align_loss(in.align->visual, in.align->text, in.align->temperature);
    if (stage == TrainingStage::text_only) a.grad_visual = Matrix(a.grad_visual.rows(), a.grad_visual.cols());
    br.align = weights.align * a.loss;
    out.align = std::move(a);
  }
  if (in.order && stage == TrainingStage::joint) {
    br.order = weights.order * order_loss(in.order->text_scores, in.order->visual_scores).loss;
  }
  br.total = br.cls + br.bbox + br.mask + br.align + br.order;
  return out;
}

TotalLossResult match_and_total_loss(const std::vector<Prediction>& preds, const std::vector<Target>& targets,
                                     const LossWeights& weights, TrainingStage stage) {
  LossInputs in;
  in.preds = preds;
  in.targets = targets;
  return match_and_total_loss(in, weights, stage);
}

}  // namespace promptkit
