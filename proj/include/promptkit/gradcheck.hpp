#pragma once

#include <cstddef>
#include <string_view>

#include "promptkit/numeric.hpp"
#include "promptkit/rng.hpp"

namespace promptkit {

enum class GradLoss { order, align, giou, l1, dice, bce };

std::string_view to_string(GradLoss loss);
GradLoss parse_grad_loss(std::string_view name);

/// Draws one random instance of the given loss at size n and compares its analytic gradient with
/// central differences. Instances keep a margin from the loss's kinks (coordinate ties for the
/// box losses, the clamp for BCE), so the comparison is meaningful.
///
/// Sizes: order uses n scores; align uses max(2, n) pairs of width 8; giou and l1 sum over n box
/// pairs; dice and bce use an n x n mask.
GradCheckReport gradcheck_instance(GradLoss loss, std::size_t n, Rng& rng, double eps = kDefaultFiniteDiffEps);

}  // namespace promptkit
