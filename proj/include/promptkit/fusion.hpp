#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "promptkit/numeric.hpp"

namespace promptkit {

inline constexpr std::size_t kDefaultFusionLayers = 3;

struct GatedAttnResult {
  /// One row per query.
  Matrix output;
  /// Softmax weights, one row per query, keys in order followed by the background token.
  Matrix weights;
  /// Weight assigned to the background token per query (last column of weights).
  Vector background_weight;
};

/// softmax(Q [K; B]^T / sqrt(d_k)) [V; B]. B joins as one extra key row and one extra value row,
/// so queries that match no key fall back to B. Throws when K and V row counts differ, when K has
/// no rows, or when widths do not agree with B.
GatedAttnResult gated_attn(const Matrix& q, const Matrix& k, const Matrix& v, std::span<const double> background,
                           std::size_t d_k);

/// Plain scaled dot-product attention.
Matrix scaled_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t d_k);

enum class Stream : std::size_t { features = 0, text = 1, visual = 2 };

/// Cross-attention pathways of one fusion layer; the first stream named is the one updated.
enum class Pathway : std::size_t { text_from_features = 0, visual_from_features = 1, features_from_visual = 2 };

inline constexpr std::array<Pathway, 3> kAllPathways = {Pathway::text_from_features, Pathway::visual_from_features,
                                                        Pathway::features_from_visual};

std::string_view to_string(Pathway p);

struct AttnProjection {
  Matrix wq;
  Matrix wk;
  Matrix wv;
  Matrix wo;
};

/// x + w2 * relu(w1 * x + b1) + b2
struct FeedForward {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
};

struct FusionParams {
  std::size_t dim = 0;
  std::size_t d_k = 0;
  /// One token shared by all pathways, or one per pathway when per_pathway_background is set.
  bool per_pathway_background = false;
  std::vector<Vector> background_tokens;
  std::array<AttnProjection, 3> self_attn;  // by Stream
  std::array<AttnProjection, 3> cross;      // by Pathway
  std::array<FeedForward, 3> ffn;           // by Stream

  const Vector& background(Pathway p) const;
  void validate() const;

  /// Every projection and FFN weight zero; a layer built from this is the identity map.
  static FusionParams zeros(std::size_t dim, std::size_t d_ff);
  /// N(0, scale^2) projections and background tokens.
  static FusionParams random(std::size_t dim, std::size_t d_ff, std::uint64_t seed, double scale = 0.1,
                             bool per_pathway_background = false);
};

/// Token streams of the encoder, one row per token.
struct FusionState {
  Matrix features;
  Matrix text;
  Matrix visual;

  std::size_t dim() const { return features.cols(); }
  const Matrix& stream(Stream s) const;
  Matrix& stream(Stream s);
};

/// Gated attention taken by each pathway in one layer; nullopt when a stream involved is empty.
struct FusionLayerTrace {
  std::array<std::optional<GatedAttnResult>, 3> pathways;
};

/// One early-fusion layer: self-attention within each stream, then the three gated pathways all
/// reading the post-self-attention snapshot, then a residual FFN per stream. Pathways touching an
/// empty stream are skipped. Token counts and widths are preserved.
FusionState fusion_layer(const FusionState& state, const FusionParams& params, FusionLayerTrace* trace = nullptr);

/// Applies layers in order.
FusionState run_fusion(const FusionState& state, std::span<const FusionParams> layers);

struct PathwayActivation {
  Pathway pathway = Pathway::text_from_features;
  bool active = false;
  std::size_t queries = 0;
  double mean_background = 0.0;
  double max_background = 0.0;
};

/// Background-token weight per pathway for one layer applied to state.
std::array<PathwayActivation, 3> background_activation_stats(const FusionState& state, const FusionParams& params);

}  // namespace promptkit
