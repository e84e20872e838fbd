#include "promptkit/prompt_encoding.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "promptkit/rng.hpp"

namespace promptkit {

void FeatureMap::validate() const {
  if (levels.empty() || levels.size() > kMaxPyramidLevels) {
    throw std::invalid_argument("FeatureMap: level count must lie in [1, 8], got " + std::to_string(levels.size()));
  }
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto& lv = levels[l];
    if (lv.dim != dim) throw std::invalid_argument("FeatureMap: level " + std::to_string(l) + " has mismatched dim");
    if (lv.height == 0 || lv.width == 0) throw std::invalid_argument("FeatureMap: level " + std::to_string(l) + " is empty");
    if (lv.data.size() != lv.height * lv.width * lv.dim) {
      throw std::invalid_argument("FeatureMap: level " + std::to_string(l) + " has wrong data length");
    }
    if (!all_finite(lv.data)) throw std::invalid_argument("FeatureMap: level " + std::to_string(l) + " is not finite");
  }
}

std::string_view to_string(PromptKind kind) { return kind == PromptKind::visual ? "visual" : "text"; }

Vector normalized(std::span<const double> v) {
  if (!all_finite(v)) throw std::invalid_argument("normalize: non-finite vector");
  const double n = l2_norm(v);
  if (n == 0.0) throw std::invalid_argument("normalize: zero vector");
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

PromptEmbedding normalize(const PromptEmbedding& p) {
  PromptEmbedding out = p;
  out.vec = normalized(p.vec);
  out.normalized = true;
  return out;
}

void DeformAttnParams::validate(std::size_t dim) const {
  if (n_points == 0) throw std::invalid_argument("DeformAttnParams: n_points must be positive");
  if (layers.empty()) throw std::invalid_argument("DeformAttnParams: no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& p = layers[l];
    const auto fail = [&](const char* what) {
      throw std::invalid_argument("DeformAttnParams: layer " + std::to_string(l) + " " + what + " has wrong shape");
    };
    if (p.offset_proj.rows() != 2 * n_points || p.offset_proj.cols() != dim) fail("offset_proj");
    if (p.attn_proj.rows() != n_points || p.attn_proj.cols() != dim) fail("attn_proj");
    if (p.value_proj.rows() != dim || p.value_proj.cols() != dim) fail("value_proj");
    if (p.output_proj.rows() != dim || p.output_proj.cols() != dim) fail("output_proj");
  }
}

DeformAttnParams DeformAttnParams::random(std::size_t dim, std::size_t n_layers, std::size_t n_points,
                                          std::uint64_t seed, double scale) {
  Rng rng(seed);
  const auto gaussian = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& x : m.data()) x = scale * rng.normal();
    return m;
  };
  DeformAttnParams p;
  p.n_points = n_points;
  for (std::size_t l = 0; l < n_layers; ++l) {
    p.layers.push_back({gaussian(2 * n_points, dim), gaussian(n_points, dim), gaussian(dim, dim), gaussian(dim, dim)});
  }
  return p;
}

DeformAttnParams DeformAttnParams::identity(std::size_t dim, std::size_t n_layers, std::size_t n_points) {
  DeformAttnParams p;
  p.n_points = n_points;
  for (std::size_t l = 0; l < n_layers; ++l) {
    p.layers.push_back({Matrix(2 * n_points, dim), Matrix(n_points, dim), Matrix::identity(dim), Matrix::identity(dim)});
  }
  return p;
}

std::size_t level_for_layer(std::size_t layer, std::size_t num_levels) {
  if (num_levels == 0) throw std::invalid_argument("level_for_layer: no levels");
  return layer % num_levels;
}

PromptEmbedding encode_visual_prompt(const FeatureMap& fm, const DeformAttnParams& params,
                                     const PromptEmbedding& init_query, std::pair<double, double> ref_point,
                                     EncodeTrace* trace) {
  fm.validate();
  params.validate(fm.dim);
  if (init_query.dim() != fm.dim) {
    throw std::invalid_argument("encode_visual_prompt: query dim " + std::to_string(init_query.dim()) +
                                " != feature dim " + std::to_string(fm.dim));
  }
  const auto [rx, ry] = ref_point;
  if (!(rx >= 0.0 && rx <= 1.0 && ry >= 0.0 && ry <= 1.0)) {
    throw std::invalid_argument("encode_visual_prompt: reference point outside [0,1]^2");
  }

  Vector query = init_query.vec;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    const std::size_t level_idx = level_for_layer(l, fm.num_levels());
    const FeatureLevel& level = fm.levels[level_idx];

    const Vector offsets = matvec(layer.offset_proj, query);
    Vector weights = matvec(layer.attn_proj, query);
    softmax_inplace(weights);

    EncodeLayerTrace rec;
    rec.layer = l;
    rec.level = level_idx;
    Vector combined(fm.dim, 0.0);
    for (std::size_t k = 0; k < params.n_points; ++k) {
      const double sx = rx + offsets[2 * k] / static_cast<double>(level.width);
      const double sy = ry + offsets[2 * k + 1] / static_cast<double>(level.height);
      Vector s = bilinear_sample(level, sx, sy);
      for (std::size_t c = 0; c < fm.dim; ++c) combined[c] += weights[k] * s[c];
      if (trace) {
        rec.sample_points.emplace_back(sx, sy);
        rec.samples.push_back(std::move(s));
      }
    }

    const Vector update = matvec(layer.output_proj, matvec(layer.value_proj, combined));
    for (std::size_t c = 0; c < fm.dim; ++c) query[c] = params.residual_scale * query[c] + update[c];

    if (trace) {
      rec.weights = std::move(weights);
      rec.combined = std::move(combined);
      trace->layers.push_back(std::move(rec));
    }
  }

  PromptEmbedding out;
  out.vec = std::move(query);
  out.kind = PromptKind::visual;
  out.category = init_query.category;
  return out;
}

std::pair<double, double> reference_point(const BoxXYXY& box) { return box.center(); }

Vector hash_embedding(std::string_view tag, std::size_t dim) {
  if (dim == 0) throw std::invalid_argument("hash_embedding: dim must be positive");
  Rng rng(fnv1a64(tag));
  Vector v(dim);
  for (double& x : v) x = rng.normal();
  return normalized(v);
}

EmbeddingProvider EmbeddingProvider::from_table(std::map<std::string, Vector> table, bool hash_fallback) {
  EmbeddingProvider p;
  p.hash_fallback_ = hash_fallback;
  for (auto& [tag, vec] : table) {
    if (p.dim_ == 0) p.dim_ = vec.size();
    if (vec.size() != p.dim_ || vec.empty()) {
      throw std::invalid_argument("embedding table: tag '" + tag + "' has length " + std::to_string(vec.size()) +
                                  ", expected " + std::to_string(p.dim_));
    }
    try {
      vec = normalized(vec);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("embedding table: tag '" + tag + "': " + e.what());
    }
  }
  if (p.dim_ == 0) p.dim_ = kDefaultModelDim;
  p.table_ = std::move(table);
  return p;
}

EmbeddingProvider EmbeddingProvider::from_json_text(std::string_view text, bool hash_fallback) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("embedding file: parse error: ") + e.what());
  }
  if (!doc.is_object()) throw std::runtime_error("embedding file: top level must be an object");
  std::map<std::string, Vector> table;
  for (const auto& [tag, arr] : doc.items()) {
    if (!arr.is_array()) throw std::runtime_error("embedding file: tag '" + tag + "' is not an array");
    Vector v;
    v.reserve(arr.size());
    for (const auto& x : arr) {
      if (!x.is_number()) throw std::runtime_error("embedding file: tag '" + tag + "' has a non-numeric entry");
      v.push_back(x.get<double>());
    }
    table.emplace(tag, std::move(v));
  }
  try {
    return from_table(std::move(table), hash_fallback);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("embedding file: ") + e.what());
  }
}

EmbeddingProvider EmbeddingProvider::from_file(const std::filesystem::path& path, bool hash_fallback) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("embedding file: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str(), hash_fallback);
}

EmbeddingProvider EmbeddingProvider::hash_only(std::size_t dim) {
  if (dim == 0) throw std::invalid_argument("EmbeddingProvider: dim must be positive");
  EmbeddingProvider p;
  p.dim_ = dim;
  p.hash_fallback_ = true;
  return p;
}

EmbeddingProvider EmbeddingProvider::constant(std::size_t dim) {
  if (dim == 0) throw std::invalid_argument("EmbeddingProvider: dim must be positive");
  EmbeddingProvider p;
  p.dim_ = dim;
  p.constant_ = true;
  return p;
}

Vector EmbeddingProvider::lookup(const std::string& tag) const {
  if (constant_) return Vector(dim_, 1.0 / std::sqrt(static_cast<double>(dim_)));
  if (auto it = table_.find(tag); it != table_.end()) return it->second;
  if (hash_fallback_ && dim_ > 0) return hash_embedding(tag, dim_);
  throw std::out_of_range("unknown tag '" + tag + "' (no embedding and hash fallback disabled)");
}

PromptEmbedding provide_text_embedding(const std::string& tag, const EmbeddingProvider& provider) {
  PromptEmbedding p;
  p.vec = provider.lookup(tag);
  p.kind = PromptKind::text;
  p.category = tag;
  p.normalized = true;
  return p;
}

}  // namespace promptkit
