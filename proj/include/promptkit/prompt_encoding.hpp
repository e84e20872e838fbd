#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "promptkit/box.hpp"
#include "promptkit/numeric.hpp"

namespace promptkit {

/// Hidden width of prompt embeddings and fused features.
inline constexpr std::size_t kDefaultModelDim = 256;
inline constexpr std::size_t kDefaultSamplingPoints = 4;
inline constexpr std::size_t kMaxPyramidLevels = 8;

/// Multi-level pyramid of feature grids sharing one vector width.
struct FeatureMap {
  std::vector<FeatureLevel> levels;
  std::size_t dim = 0;

  /// Throws unless 1..8 levels, all sharing dim, all finite.
  void validate() const;
  std::size_t num_levels() const { return levels.size(); }
};

enum class PromptKind { visual, text };

std::string_view to_string(PromptKind kind);

struct PromptEmbedding {
  Vector vec;
  PromptKind kind = PromptKind::visual;
  std::optional<std::string> category;
  bool normalized = false;

  std::size_t dim() const { return vec.size(); }
};

/// Unit-L2 copy. Throws on a zero or non-finite vector.
PromptEmbedding normalize(const PromptEmbedding& p);
Vector normalized(std::span<const double> v);

/// Parameters of one simplified single-head deformable attention layer.
///   offsets    = offset_proj * query        (2 * n_points rows, x then y per point)
///   logits     = attn_proj * query          (n_points rows), softmax-normalized
///   sample_k   = bilinear(level, ref + offset_k / (width, height))
///   update     = output_proj * value_proj * sum_k a_k sample_k
///   next_query = residual_scale * query + update
struct DeformAttnLayer {
  Matrix offset_proj;
  Matrix attn_proj;
  Matrix value_proj;
  Matrix output_proj;
};

struct DeformAttnParams {
  std::size_t n_points = kDefaultSamplingPoints;
  double residual_scale = 1.0;
  std::vector<DeformAttnLayer> layers;

  std::size_t layer_count() const { return layers.size(); }
  void validate(std::size_t dim) const;

  /// Small random weights (N(0, scale^2)), seeded.
  static DeformAttnParams random(std::size_t dim, std::size_t n_layers, std::size_t n_points, std::uint64_t seed,
                                 double scale = 0.1);
  /// Zero offsets and attention logits, identity value/output projections.
  static DeformAttnParams identity(std::size_t dim, std::size_t n_layers, std::size_t n_points);
};

/// Per-layer record of what the encoder read, for instrumentation.
struct EncodeLayerTrace {
  std::size_t layer = 0;
  std::size_t level = 0;
  std::vector<std::pair<double, double>> sample_points;
  std::vector<Vector> samples;
  Vector weights;
  /// sum_k weights[k] * samples[k], before projection.
  Vector combined;
};

struct EncodeTrace {
  std::vector<EncodeLayerTrace> layers;
};

/// Level read by layer `layer` when the encoder has more or fewer layers than the pyramid has
/// levels: layer l reads level l mod L.
std::size_t level_for_layer(std::size_t layer, std::size_t num_levels);

/// Refines init_query through every layer in order, each layer attending to its paired level
/// around ref_point. Output kind is visual.
PromptEmbedding encode_visual_prompt(const FeatureMap& fm, const DeformAttnParams& params,
                                     const PromptEmbedding& init_query, std::pair<double, double> ref_point,
                                     EncodeTrace* trace = nullptr);

/// Box prompts attend around the box center.
std::pair<double, double> reference_point(const BoxXYXY& box);

/// Source of text prompt embeddings: a file-backed table, an optional deterministic hash
/// fallback for unknown tags, or a constant vector for every tag.
class EmbeddingProvider {
 public:
  /// Loads a JSON object mapping tag -> array of floats. Throws on parse error, non-numeric
  /// entries or ragged lengths.
  static EmbeddingProvider from_file(const std::filesystem::path& path, bool hash_fallback = false);
  static EmbeddingProvider from_json_text(std::string_view text, bool hash_fallback = false);
  static EmbeddingProvider from_table(std::map<std::string, Vector> table, bool hash_fallback = false);
  /// Every tag maps to a pseudo-random unit vector seeded by its bytes.
  static EmbeddingProvider hash_only(std::size_t dim);
  /// Every tag maps to the same unit vector.
  static EmbeddingProvider constant(std::size_t dim);

  std::size_t dim() const { return dim_; }
  bool hash_fallback() const { return hash_fallback_; }
  bool contains(const std::string& tag) const { return table_.count(tag) != 0; }

  /// Unit-length vector for tag. Throws naming the tag if it is unknown and fallback is off.
  Vector lookup(const std::string& tag) const;

 private:
  EmbeddingProvider() = default;

  std::map<std::string, Vector> table_;
  std::size_t dim_ = 0;
  bool hash_fallback_ = false;
  bool constant_ = false;
};

/// Deterministic pseudo-random unit vector for tag.
Vector hash_embedding(std::string_view tag, std::size_t dim);

PromptEmbedding provide_text_embedding(const std::string& tag, const EmbeddingProvider& provider);

}  // namespace promptkit
