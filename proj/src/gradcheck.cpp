#include "promptkit/gradcheck.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "promptkit/alignment.hpp"
#include "promptkit/order_align.hpp"
#include "promptkit/set_losses.hpp"

namespace promptkit {

namespace {

constexpr double kKinkMargin = 0.02;
constexpr std::size_t kAlignWidth = 8;

// Four coordinates in [0, 1] that are pairwise at least kKinkMargin apart.
std::array<double, 4> separated_coords(Rng& rng) {
  for (;;) {
    std::array<double, 4> v{};
    for (double& x : v) x = rng.uniform();
    std::array<double, 4> s = v;
    std::sort(s.begin(), s.end());
    if (s[1] - s[0] >= kKinkMargin && s[2] - s[1] >= kKinkMargin && s[3] - s[2] >= kKinkMargin) return v;
  }
}

std::pair<BoxXYXY, BoxXYXY> box_pair(Rng& rng) {
  const auto xs = separated_coords(rng);
  const auto ys = separated_coords(rng);
  const BoxXYXY pred{std::min(xs[0], xs[1]), std::min(ys[0], ys[1]), std::max(xs[0], xs[1]), std::max(ys[0], ys[1])};
  const BoxXYXY gt{std::min(xs[2], xs[3]), std::min(ys[2], ys[3]), std::max(xs[2], xs[3]), std::max(ys[2], ys[3])};
  return {pred, gt};
}

Matrix unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    auto r = m.row(i);
    for (double& x : r) x = rng.normal();
    const double n = l2_norm(r);
    for (double& x : r) x /= n;
  }
  return m;
}

GradCheckReport check(const ScalarFn& f, const Vector& params, const Vector& analytic, double eps) {
  const Vector numeric = finite_diff_grad(f, params, eps);
  return compare_grads(analytic, numeric);
}

GradCheckReport check_order(std::size_t n, Rng& rng, double eps) {
  Vector p(2 * n);
  for (double& x : p) x = rng.normal();
  const auto split = [n](std::span<const double> q) { return std::pair{q.subspan(0, n), q.subspan(n, n)}; };
  const auto [a, b] = split(p);
  const OrderLossResult r = order_loss(a, b);
  Vector analytic = r.grad_a;
  analytic.insert(analytic.end(), r.grad_b.begin(), r.grad_b.end());
  return check(
      [&](std::span<const double> q) {
        const auto [qa, qb] = split(q);
        return order_loss(qa, qb).loss;
      },
      p, analytic, eps);
}

GradCheckReport check_align(std::size_t n, Rng& rng, double eps) {
  const std::size_t k = std::max<std::size_t>(2, n);
  const Matrix visual = unit_rows(k, kAlignWidth, rng);
  const Matrix text = unit_rows(k, kAlignWidth, rng);
  const bool with_negatives = rng.below(2) == 1;
  const Matrix negatives = unit_rows(k, kAlignWidth, rng);
  const Matrix* neg = with_negatives ? &negatives : nullptr;
  const std::size_t half = k * kAlignWidth;

  Vector p(visual.data().begin(), visual.data().end());
  p.insert(p.end(), text.data().begin(), text.data().end());
  const AlignLossResult r = align_loss(visual, text, kDefaultAlignTemperature, neg);
  Vector analytic(r.grad_visual.data().begin(), r.grad_visual.data().end());
  analytic.insert(analytic.end(), r.grad_text.data().begin(), r.grad_text.data().end());
  return check(
      [&](std::span<const double> q) {
        const Matrix v(k, kAlignWidth, Vector(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(half)));
        const Matrix t(k, kAlignWidth, Vector(q.begin() + static_cast<std::ptrdiff_t>(half), q.end()));
        return align_loss(v, t, kDefaultAlignTemperature, neg).loss;
      },
      p, analytic, eps);
}

template <typename BoxFn>
GradCheckReport check_boxes(std::size_t n, Rng& rng, double eps, BoxFn loss_fn) {
  std::vector<BoxXYXY> gts;
  Vector p;
  for (std::size_t i = 0; i < n; ++i) {
    const auto [pred, gt] = box_pair(rng);
    const auto a = pred.to_array();
    p.insert(p.end(), a.begin(), a.end());
    gts.push_back(gt);
  }
  const auto box_at = [](std::span<const double> q, std::size_t i) {
    return BoxXYXY{q[4 * i], q[4 * i + 1], q[4 * i + 2], q[4 * i + 3]};
  };
  Vector analytic;
  for (std::size_t i = 0; i < n; ++i) {
    const BoxLoss r = loss_fn(box_at(p, i), gts[i]);
    analytic.insert(analytic.end(), r.grad.begin(), r.grad.end());
  }
  return check(
      [&](std::span<const double> q) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += loss_fn(box_at(q, i), gts[i]).loss;
        return sum;
      },
      p, analytic, eps);
}

template <typename MaskFn>
GradCheckReport check_mask(std::size_t n, Rng& rng, double eps, double lo, double hi, MaskFn loss_fn) {
  MaskGrid pred(n, n), gt(n, n);
  for (double& x : pred.values) x = rng.uniform(lo, hi);
  for (double& x : gt.values) x = rng.below(2) == 1 ? 1.0 : 0.0;
  const MaskLoss r = loss_fn(pred, gt);
  return check(
      [&](std::span<const double> q) { return loss_fn(MaskGrid(n, n, Vector(q.begin(), q.end())), gt).loss; },
      pred.values, r.grad, eps);
}

}  // namespace

std::string_view to_string(GradLoss loss) {
  switch (loss) {
    case GradLoss::order:
      return "order";
    case GradLoss::align:
      return "align";
    case GradLoss::giou:
      return "giou";
    case GradLoss::l1:
      return "l1";
    case GradLoss::dice:
      return "dice";
    case GradLoss::bce:
      return "bce";
  }
  return "unknown";
}

GradLoss parse_grad_loss(std::string_view name) {
  for (GradLoss l : {GradLoss::order, GradLoss::align, GradLoss::giou, GradLoss::l1, GradLoss::dice, GradLoss::bce})
    if (to_string(l) == name) return l;
  throw std::invalid_argument("unknown loss '" + std::string(name) + "' (expected order, align, giou, l1, dice or bce)");
}

GradCheckReport gradcheck_instance(GradLoss loss, std::size_t n, Rng& rng, double eps) {
  if (n == 0) throw std::invalid_argument("gradcheck: n must be positive");
  switch (loss) {
    case GradLoss::order:
      if (n < 2) throw std::invalid_argument("gradcheck: order loss needs n >= 2");
      return check_order(n, rng, eps);
    case GradLoss::align:
      return check_align(n, rng, eps);
    case GradLoss::giou:
      return check_boxes(n, rng, eps, giou_loss);
    case GradLoss::l1:
      return check_boxes(n, rng, eps, l1_box_loss);
    case GradLoss::dice:
      return check_mask(n, rng, eps, 0.05, 0.95, [](const MaskGrid& p, const MaskGrid& g) { return dice_loss(p, g); });
    case GradLoss::bce:
      return check_mask(n, rng, eps, 0.02, 0.98, bce_mask_loss);
  }
  throw std::invalid_argument("gradcheck: unknown loss");
}

}  // namespace promptkit
