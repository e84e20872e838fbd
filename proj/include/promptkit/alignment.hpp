#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "promptkit/numeric.hpp"
#include "promptkit/prompt_encoding.hpp"

namespace promptkit {

inline constexpr double kDefaultAlignTemperature = 0.07;

struct AlignPair {
  PromptEmbedding visual;
  PromptEmbedding text;
  std::string category;
  std::string dataset_id;
};

/// K visual/text prompt pairs drawn from one scene or batch.
struct AlignBatch {
  std::vector<AlignPair> pairs;

  /// Throws unless K >= 1, categories are nonempty, and embeddings are unit length (1e-9).
  void validate() const;
  std::size_t size() const { return pairs.size(); }
  Matrix visual_matrix() const;
  Matrix text_matrix() const;
};

struct AlignLossResult {
  double loss = 0.0;
  Matrix grad_visual;
  Matrix grad_text;
  /// Gradient for the extra negative keys; empty when none were supplied.
  Matrix grad_negatives;
};

/// Symmetric contrastive cross-entropy over scaled similarities:
///   loss = 0.5 * (CE(V T^T / temp) + CE(T V^T / temp))
/// where CE(S) = -(1/K) sum_i log softmax(S_i)[i]. Rows of visual and text are assumed unit
/// length so dot products are cosines; gradients are taken w.r.t. these rows as given.
///
/// text_negatives, when given, holds one row per text prompt that is appended as an extra key
/// in that prompt's text->visual softmax.
///
/// Throws if K < 2, the shapes disagree, or temperature <= 0.
AlignLossResult align_loss(const Matrix& visual, const Matrix& text, double temperature,
                           const Matrix* text_negatives = nullptr);

/// Batch form. With use_negatives, each pair's text prompt also contrasts against the negative
/// visual prompt of its category (treated as a constant).
AlignLossResult align_loss(const AlignBatch& batch, double temperature = kDefaultAlignTemperature,
                           bool use_negatives = false);

/// For every category c, the renormalized mean of all visual embeddings whose category is not c.
/// Requires at least two distinct categories. The result does not depend on pair order.
std::map<std::string, PromptEmbedding> build_negative_prompts(const AlignBatch& batch);

// ---------------------------------------------------------------------------
// Dataset-aware sampling

struct ManifestSample {
  std::string id;
  std::string dataset;
};

struct SamplerManifest {
  std::vector<ManifestSample> samples;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// {"batch_size": n, "seed": s, "samples": [{"id": str, "dataset": str}]}; seed is optional (0).
SamplerManifest parse_manifest(std::string_view json_text);
SamplerManifest load_manifest(const std::filesystem::path& path);

struct SampleBatch {
  std::string dataset;
  std::vector<std::string> sample_ids;

  bool operator==(const SampleBatch&) const = default;
};

/// One epoch of single-dataset batches. Samples are shuffled within each dataset and chunked
/// (only a dataset's last chunk may be short). Datasets are interleaved by shuffling the sequence
/// of batch slots, so each dataset appears in proportion to its batch count and its own batches
/// keep their chunk order.
std::vector<SampleBatch> sample_batches(const SamplerManifest& manifest);

}  // namespace promptkit
