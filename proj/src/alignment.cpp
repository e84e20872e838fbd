#include "promptkit/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "promptkit/rng.hpp"

namespace promptkit {

namespace {

constexpr double kUnitTolerance = 1e-9;

void check_unit(const PromptEmbedding& p, std::size_t i, const char* which) {
  if (!all_finite(p.vec)) throw std::invalid_argument("AlignBatch: pair " + std::to_string(i) + " " + which + " is not finite");
  if (std::abs(l2_norm(p.vec) - 1.0) > kUnitTolerance) {
    throw std::invalid_argument("AlignBatch: pair " + std::to_string(i) + " " + which + " embedding is not unit length");
  }
}

// -(1/K) sum_i log softmax(row_i)[i] over a logits matrix whose first K columns are the
// positive/negative candidates; accumulates d loss / d logits into grad.
double cross_entropy_diag(const Matrix& logits, Matrix& grad) {
  const std::size_t k = logits.rows();
  const double inv_k = 1.0 / static_cast<double>(k);
  double loss = 0.0;
  grad = Matrix(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < k; ++i) {
    const auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double x : row) sum += std::exp(x - mx);
    const double log_z = mx + std::log(sum);
    loss -= (row[i] - log_z) * inv_k;
    auto g = grad.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) g[j] = std::exp(row[j] - log_z) * inv_k;
    g[i] -= inv_k;
  }
  return loss;
}

}  // namespace

void AlignBatch::validate() const {
  if (pairs.empty()) throw std::invalid_argument("AlignBatch: no pairs");
  const std::size_t dim = pairs.front().visual.dim();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.category.empty()) throw std::invalid_argument("AlignBatch: pair " + std::to_string(i) + " has empty category");
    if (p.visual.dim() != dim || p.text.dim() != dim || dim == 0) {
      throw std::invalid_argument("AlignBatch: pair " + std::to_string(i) + " has inconsistent embedding width");
    }
    check_unit(p.visual, i, "visual");
    check_unit(p.text, i, "text");
  }
}

Matrix AlignBatch::visual_matrix() const {
  std::vector<Vector> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) rows.push_back(p.visual.vec);
  return Matrix::from_rows(rows);
}

Matrix AlignBatch::text_matrix() const {
  std::vector<Vector> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) rows.push_back(p.text.vec);
  return Matrix::from_rows(rows);
}

AlignLossResult align_loss(const Matrix& visual, const Matrix& text, double temperature, const Matrix* text_negatives) {
  const std::size_t k = visual.rows();
  const std::size_t d = visual.cols();
  if (k < 2) throw std::invalid_argument("align_loss: need at least 2 pairs, got " + std::to_string(k));
  if (text.rows() != k || text.cols() != d) throw std::invalid_argument("align_loss: visual and text shapes differ");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("align_loss: temperature must be positive");
  }
  if (text_negatives && (text_negatives->rows() != k || text_negatives->cols() != d)) {
    throw std::invalid_argument("align_loss: negatives must have one row per pair");
  }
  const double inv_t = 1.0 / temperature;

  // visual -> text
  Matrix s_vt = matmul_transposed(visual, text);
  for (double& x : s_vt.data()) x *= inv_t;
  Matrix g_vt;
  const double loss_vt = cross_entropy_diag(s_vt, g_vt);

  // text -> visual, optionally with one extra negative key per row
  const std::size_t extra = text_negatives ? 1 : 0;
  Matrix s_tv(k, k + extra);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) s_tv(i, j) = dot(text.row(i), visual.row(j)) * inv_t;
    if (text_negatives) s_tv(i, k) = dot(text.row(i), text_negatives->row(i)) * inv_t;
  }
  Matrix g_tv;
  const double loss_tv = cross_entropy_diag(s_tv, g_tv);

  AlignLossResult r;
  r.loss = 0.5 * (loss_vt + loss_tv);
  r.grad_visual = Matrix(k, d);
  r.grad_text = Matrix(k, d);
  if (text_negatives) r.grad_negatives = Matrix(k, d);

  const double c = 0.5 * inv_t;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double a = c * g_vt(i, j);  // d/d s_vt(i,j) = v_i . t_j
      const double b = c * g_tv(i, j);  // d/d s_tv(i,j) = t_i . v_j
      auto gv_i = r.grad_visual.row(i);
      auto gt_j = r.grad_text.row(j);
      auto gt_i = r.grad_text.row(i);
      auto gv_j = r.grad_visual.row(j);
      const auto v_i = visual.row(i), t_j = text.row(j), t_i = text.row(i), v_j = visual.row(j);
      for (std::size_t e = 0; e < d; ++e) {
        gv_i[e] += a * t_j[e];
        gt_j[e] += a * v_i[e];
        gt_i[e] += b * v_j[e];
        gv_j[e] += b * t_i[e];
      }
    }
  if (text_negatives) {
    for (std::size_t i = 0; i < k; ++i) {
      const double b = c * g_tv(i, k);
      auto gt_i = r.grad_text.row(i);
      auto gn_i = r.grad_negatives.row(i);
      const auto n_i = text_negatives->row(i);
      const auto t_i = text.row(i);
      for (std::size_t e = 0; e < d; ++e) {
        gt_i[e] += b * n_i[e];
        gn_i[e] += b * t_i[e];
      }
    }
  }
  return r;
}

AlignLossResult align_loss(const AlignBatch& batch, double temperature, bool use_negatives) {
  batch.validate();
  const Matrix visual = batch.visual_matrix();
  const Matrix text = batch.text_matrix();
  if (!use_negatives) return align_loss(visual, text, temperature);

  const auto negatives = build_negative_prompts(batch);
  std::vector<Vector> rows;
  rows.reserve(batch.size());
  for (const auto& p : batch.pairs) rows.push_back(negatives.at(p.category).vec);
  const Matrix neg = Matrix::from_rows(rows);
  AlignLossResult r = align_loss(visual, text, temperature, &neg);
  r.grad_negatives = Matrix();
  return r;
}

std::map<std::string, PromptEmbedding> build_negative_prompts(const AlignBatch& batch) {
  batch.validate();
  std::set<std::string> categories;
  for (const auto& p : batch.pairs) categories.insert(p.category);
  if (categories.size() < 2) {
    throw std::invalid_argument("build_negative_prompts: need at least 2 distinct categories, got " +
                                std::to_string(categories.size()));
  }
  const std::size_t dim = batch.pairs.front().visual.dim();

  std::map<std::string, PromptEmbedding> out;
  for (const auto& c : categories) {
    // Canonical summation order makes the result independent of pair order.
    std::vector<const Vector*> others;
    for (const auto& p : batch.pairs)
      if (p.category != c) others.push_back(&p.visual.vec);
    std::sort(others.begin(), others.end(), [](const Vector* a, const Vector* b) { return *a < *b; });

    Vector mean(dim, 0.0);
    for (const Vector* v : others)
      for (std::size_t e = 0; e < dim; ++e) mean[e] += (*v)[e];
    for (double& x : mean) x /= static_cast<double>(others.size());

    PromptEmbedding neg;
    neg.vec = normalized(mean);
    neg.kind = PromptKind::visual;
    neg.category = c;
    neg.normalized = true;
    out.emplace(c, std::move(neg));
  }
  return out;
}

void SamplerManifest::validate() const {
  if (samples.empty()) throw std::invalid_argument("sampler manifest: no samples");
  if (batch_size == 0) throw std::invalid_argument("sampler manifest: batch_size must be >= 1");
  for (const auto& s : samples)
    if (s.dataset.empty()) throw std::invalid_argument("sampler manifest: sample '" + s.id + "' has empty dataset");
}

SamplerManifest parse_manifest(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("sampler manifest: parse error: ") + e.what());
  }
  SamplerManifest m;
  try {
    const auto bs = doc.at("batch_size").get<long long>();
    if (bs < 1) throw std::invalid_argument("sampler manifest: batch_size must be >= 1");
    m.batch_size = static_cast<std::size_t>(bs);
    if (doc.contains("seed")) m.seed = doc["seed"].get<std::uint64_t>();
    for (const auto& s : doc.at("samples")) {
      m.samples.push_back({s.at("id").get<std::string>(), s.at("dataset").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("sampler manifest: ") + e.what());
  }
  m.validate();
  return m;
}

SamplerManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("sampler manifest: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

std::vector<SampleBatch> sample_batches(const SamplerManifest& manifest) {
  manifest.validate();
  std::map<std::string, std::vector<std::string>> by_dataset;
  for (const auto& s : manifest.samples) by_dataset[s.dataset].push_back(s.id);

  Rng rng(manifest.seed);
  std::vector<std::vector<SampleBatch>> per_dataset;
  std::vector<std::size_t> slots;  // one entry per batch, naming its dataset
  for (auto& [dataset, ids] : by_dataset) {
    shuffle(ids, rng);
    auto& chunks = per_dataset.emplace_back();
    for (std::size_t start = 0; start < ids.size(); start += manifest.batch_size) {
      const std::size_t end = std::min(ids.size(), start + manifest.batch_size);
      chunks.push_back({dataset, std::vector<std::string>(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                                          ids.begin() + static_cast<std::ptrdiff_t>(end))});
      slots.push_back(per_dataset.size() - 1);
    }
  }
  shuffle(slots, rng);

  std::vector<SampleBatch> batches;
  batches.reserve(slots.size());
  std::vector<std::size_t> next(per_dataset.size(), 0);
  for (std::size_t d : slots) batches.push_back(std::move(per_dataset[d][next[d]++]));
  return batches;
}

}  // namespace promptkit
