#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptkit/box.hpp"
#include "promptkit/prompt_encoding.hpp"

namespace promptkit {

enum class AnnotationSource { top_down, bottom_up };

std::string_view to_string(AnnotationSource s);
AnnotationSource parse_annotation_source(std::string_view name);

struct Instance {
  BoxXYXY box;
  std::string tag;
  double score = 0.0;
  /// Verified output only: bottom-up tag when it differs from tag.
  std::optional<std::string> alias_tag;
  /// Verified output only: tag similarity of the matched pair.
  std::optional<double> similarity;
};

struct AnnotationSet {
  std::string image_id;
  int width = 0;
  int height = 0;
  AnnotationSource source = AnnotationSource::top_down;
  std::vector<Instance> instances;

  void validate() const;
};

/// Parses the annotation JSON schema:
///   {"image_id": str, "width": int, "height": int, "source": "top_down"|"bottom_up",
///    "instances": [{"box": [x1,y1,x2,y2], "tag": str, "score": float}]}
/// Verified files may additionally carry "alias_tag" and "similarity" per instance.
AnnotationSet parse_annotation_set(std::string_view json_text);
AnnotationSet load_annotation_set(const std::filesystem::path& path);
/// Serializes with keys in schema order; output is byte-stable for equal inputs.
std::string dump_annotation_set(const AnnotationSet& set);

inline constexpr double kDefaultIouGate = 0.5;
inline constexpr double kDefaultSimThreshold = 0.6;

/// Base for retention_rate.
enum class RetentionBase { mean_of_inputs, top_down, bottom_up };

RetentionBase parse_retention_base(std::string_view name);
std::string_view to_string(RetentionBase b);

struct VerifyThresholds {
  double iou_gate = kDefaultIouGate;
  double sim_threshold = kDefaultSimThreshold;
  RetentionBase retention_base = RetentionBase::mean_of_inputs;
};

struct VerificationReport {
  std::size_t input_a = 0;
  std::size_t input_b = 0;
  /// Pairs produced by Hungarian matching, min(input_a, input_b).
  std::size_t matched = 0;
  /// Matched pairs with IoU >= iou_gate; these are the pairs whose tag similarity is scored.
  std::size_t gated = 0;
  std::size_t retained = 0;
  double retention_rate = 0.0;
  /// Mean tag similarity over gated pairs (0 when there are none).
  double mean_similarity_before = 0.0;
  /// Mean tag similarity over retained pairs (0 when there are none).
  double mean_similarity_after = 0.0;
};

struct ScoredPair {
  std::size_t a_index = 0;
  std::size_t b_index = 0;
  double iou = 0.0;
  /// Tag cosine similarity; only computed when the IoU gate passed.
  std::optional<double> similarity;
  bool retained = false;
};

struct VerifyResult {
  AnnotationSet verified;
  VerificationReport report;
  std::vector<ScoredPair> pairs;
};

/// Cross-verifies a top-down set against a bottom-up set of the same image: Hungarian matching
/// on 1 - IoU, IoU gate on matched pairs, then tag-similarity filtering. Retained pairs keep the
/// top-down box, score and tag, with the bottom-up tag as alias when the tags differ. Unmatched
/// instances are dropped.
VerifyResult cross_verify(const AnnotationSet& a, const AnnotationSet& b, const EmbeddingProvider& emb,
                          const VerifyThresholds& thresholds);

double retention_rate(std::size_t retained, std::size_t input_a, std::size_t input_b, RetentionBase base);

/// Sums counts and recomputes rate and count-weighted means.
VerificationReport combine_reports(std::span<const VerificationReport> reports, RetentionBase base);

struct BatchVerifyResult {
  VerificationReport aggregate;
  /// Keyed by image_id, only for images present in both inputs and verified without error.
  std::map<std::string, VerifyResult> images;
  /// image_ids present in only one input, with the side ("a" or "b") they came from.
  std::vector<std::pair<std::string, std::string>> unpaired;
  /// File or image -> error message.
  std::vector<std::pair<std::string, std::string>> errors;

  bool ok() const { return errors.empty(); }
};

/// Runs cross_verify for every image_id found in both directories (*.json files, keyed by the
/// image_id field). Malformed files are recorded in errors and skipped.
BatchVerifyResult batch_verify(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b,
                               const EmbeddingProvider& emb, const VerifyThresholds& thresholds, std::size_t jobs = 1);

inline constexpr std::size_t kSimilarityBins = 20;

struct SimilarityHistogram {
  double lo = -1.0;
  double hi = 1.0;
  std::vector<std::size_t> counts = std::vector<std::size_t>(kSimilarityBins, 0);

  void add(double value);
  std::size_t total() const;
};

struct RetentionSummary {
  VerificationReport totals;
  SimilarityHistogram before;
  SimilarityHistogram after;
};

/// Totals and similarity histograms before and after similarity filtering.
RetentionSummary retention_stats(std::span<const VerifyResult> results, RetentionBase base);

}  // namespace promptkit
