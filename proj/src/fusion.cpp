#include "promptkit/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "promptkit/rng.hpp"

namespace promptkit {

GatedAttnResult gated_attn(const Matrix& q, const Matrix& k, const Matrix& v, std::span<const double> background,
                           std::size_t d_k) {
  if (d_k == 0) throw std::invalid_argument("gated_attn: d_k must be positive");
  if (k.rows() != v.rows()) {
    throw std::invalid_argument("gated_attn: key rows (" + std::to_string(k.rows()) + ") != value rows (" +
                                std::to_string(v.rows()) + ")");
  }
  if (k.rows() == 0) throw std::invalid_argument("gated_attn: at least one key is required");
  const std::size_t width = background.size();
  if (q.cols() != width || k.cols() != width || v.cols() != width) {
    throw std::invalid_argument("gated_attn: query, key, value and background widths must agree");
  }
  if (!all_finite(background)) throw std::invalid_argument("gated_attn: background token is not finite");

  const std::size_t n_keys = k.rows();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d_k));
  GatedAttnResult r;
  r.weights = Matrix(q.rows(), n_keys + 1);
  r.output = Matrix(q.rows(), width);
  r.background_weight.resize(q.rows());

  for (std::size_t i = 0; i < q.rows(); ++i) {
    auto w = r.weights.row(i);
    for (std::size_t j = 0; j < n_keys; ++j) w[j] = dot(q.row(i), k.row(j)) * inv_scale;
    w[n_keys] = dot(q.row(i), background) * inv_scale;
    softmax_inplace(w);

    auto out = r.output.row(i);
    for (std::size_t j = 0; j < n_keys; ++j) {
      const auto vj = v.row(j);
      for (std::size_t c = 0; c < width; ++c) out[c] += w[j] * vj[c];
    }
    for (std::size_t c = 0; c < width; ++c) out[c] += w[n_keys] * background[c];
    r.background_weight[i] = w[n_keys];
  }
  return r;
}

Matrix scaled_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t d_k) {
  if (d_k == 0) throw std::invalid_argument("scaled_attention: d_k must be positive");
  if (k.rows() != v.rows()) throw std::invalid_argument("scaled_attention: key/value row mismatch");
  Matrix logits = matmul_transposed(q, k);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d_k));
  for (double& x : logits.data()) x *= inv_scale;
  for (std::size_t i = 0; i < logits.rows(); ++i) softmax_inplace(logits.row(i));
  return matmul(logits, v);
}

std::string_view to_string(Pathway p) {
  switch (p) {
    case Pathway::text_from_features:
      return "text_from_features";
    case Pathway::visual_from_features:
      return "visual_from_features";
    case Pathway::features_from_visual:
      return "features_from_visual";
  }
  return "unknown";
}

const Vector& FusionParams::background(Pathway p) const {
  return per_pathway_background ? background_tokens.at(static_cast<std::size_t>(p)) : background_tokens.at(0);
}

namespace {

void check_square(const Matrix& m, std::size_t dim, const char* what) {
  if (m.rows() != dim || m.cols() != dim) {
    throw std::invalid_argument(std::string("FusionParams: ") + what + " must be " + std::to_string(dim) + "x" +
                                std::to_string(dim));
  }
}

void check_projection(const AttnProjection& p, std::size_t dim) {
  check_square(p.wq, dim, "wq");
  check_square(p.wk, dim, "wk");
  check_square(p.wv, dim, "wv");
  check_square(p.wo, dim, "wo");
}

void check_ffn(const FeedForward& f, std::size_t dim) {
  const std::size_t hidden = f.w1.rows();
  if (f.w1.cols() != dim || f.b1.size() != hidden || f.w2.rows() != dim || f.w2.cols() != hidden || f.b2.size() != dim) {
    throw std::invalid_argument("FusionParams: FFN shapes are inconsistent");
  }
}

// Rows of x mapped through w: out(i, :) = w * x(i, :).
Matrix project(const Matrix& x, const Matrix& w) { return matmul_transposed(x, w); }

void add_inplace(Matrix& dst, const Matrix& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

Matrix self_attention_block(const Matrix& x, const AttnProjection& p, std::size_t d_k) {
  if (x.rows() == 0) return x;
  Matrix out = x;
  add_inplace(out, project(scaled_attention(project(x, p.wq), project(x, p.wk), project(x, p.wv), d_k), p.wo));
  return out;
}

Matrix ffn_block(const Matrix& x, const FeedForward& f) {
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Vector h = matvec(f.w1, x.row(i));
    for (std::size_t j = 0; j < h.size(); ++j) h[j] = std::max(0.0, h[j] + f.b1[j]);
    const Vector y = matvec(f.w2, h);
    auto o = out.row(i);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] += y[c] + f.b2[c];
  }
  return out;
}

Matrix gaussian(std::size_t r, std::size_t c, Rng& rng, double scale) {
  Matrix m(r, c);
  for (double& x : m.data()) x = scale * rng.normal();
  return m;
}

Vector gaussian_vec(std::size_t n, Rng& rng, double scale) {
  Vector v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

}  // namespace

void FusionParams::validate() const {
  if (dim == 0 || d_k == 0) throw std::invalid_argument("FusionParams: dim and d_k must be positive");
  const std::size_t expected_tokens = per_pathway_background ? 3 : 1;
  if (background_tokens.size() != expected_tokens) {
    throw std::invalid_argument("FusionParams: expected " + std::to_string(expected_tokens) + " background token(s)");
  }
  for (const auto& b : background_tokens) {
    if (b.size() != dim) throw std::invalid_argument("FusionParams: background token has wrong width");
    if (!all_finite(b)) throw std::invalid_argument("FusionParams: background token is not finite");
  }
  for (const auto& p : self_attn) check_projection(p, dim);
  for (const auto& p : cross) check_projection(p, dim);
  for (const auto& f : ffn) check_ffn(f, dim);
}

FusionParams FusionParams::zeros(std::size_t dim, std::size_t d_ff) {
  FusionParams p;
  p.dim = dim;
  p.d_k = dim;
  p.background_tokens = {Vector(dim, 0.0)};
  const AttnProjection zero_proj{Matrix(dim, dim), Matrix(dim, dim), Matrix(dim, dim), Matrix(dim, dim)};
  p.self_attn.fill(zero_proj);
  p.cross.fill(zero_proj);
  p.ffn.fill(FeedForward{Matrix(d_ff, dim), Vector(d_ff, 0.0), Matrix(dim, d_ff), Vector(dim, 0.0)});
  return p;
}

FusionParams FusionParams::random(std::size_t dim, std::size_t d_ff, std::uint64_t seed, double scale,
                                  bool per_pathway_background) {
  Rng rng(seed);
  FusionParams p;
  p.dim = dim;
  p.d_k = dim;
  p.per_pathway_background = per_pathway_background;
  const std::size_t n_tokens = per_pathway_background ? 3 : 1;
  for (std::size_t t = 0; t < n_tokens; ++t) p.background_tokens.push_back(gaussian_vec(dim, rng, 1.0));
  const auto proj = [&] {
    return AttnProjection{gaussian(dim, dim, rng, scale), gaussian(dim, dim, rng, scale),
                          gaussian(dim, dim, rng, scale), gaussian(dim, dim, rng, scale)};
  };
  for (auto& s : p.self_attn) s = proj();
  for (auto& c : p.cross) c = proj();
  for (auto& f : p.ffn) {
    f = FeedForward{gaussian(d_ff, dim, rng, scale), Vector(d_ff, 0.0), gaussian(dim, d_ff, rng, scale), Vector(dim, 0.0)};
  }
  return p;
}

const Matrix& FusionState::stream(Stream s) const {
  switch (s) {
    case Stream::features:
      return features;
    case Stream::text:
      return text;
    case Stream::visual:
      return visual;
  }
  throw std::invalid_argument("unknown stream");
}

Matrix& FusionState::stream(Stream s) { return const_cast<Matrix&>(std::as_const(*this).stream(s)); }

namespace {

struct PathwayEnds {
  Stream updated;
  Stream source;
};

PathwayEnds ends(Pathway p) {
  switch (p) {
    case Pathway::text_from_features:
      return {Stream::text, Stream::features};
    case Pathway::visual_from_features:
      return {Stream::visual, Stream::features};
    case Pathway::features_from_visual:
      return {Stream::features, Stream::visual};
  }
  throw std::invalid_argument("unknown pathway");
}

void check_state(const FusionState& state, std::size_t dim) {
  for (Stream s : {Stream::features, Stream::text, Stream::visual}) {
    const Matrix& m = state.stream(s);
    if (m.rows() > 0 && m.cols() != dim) {
      throw std::invalid_argument("fusion_layer: stream width " + std::to_string(m.cols()) + " != model dim " +
                                  std::to_string(dim));
    }
  }
}

}  // namespace

FusionState fusion_layer(const FusionState& state, const FusionParams& params, FusionLayerTrace* trace) {
  params.validate();
  check_state(state, params.dim);

  FusionState snapshot;
  for (Stream s : {Stream::features, Stream::text, Stream::visual}) {
    const Matrix& x = state.stream(s);
    snapshot.stream(s) = self_attention_block(x, params.self_attn[static_cast<std::size_t>(s)], params.d_k);
  }

  FusionState next = snapshot;
  for (Pathway p : kAllPathways) {
    const auto [updated, source] = ends(p);
    const Matrix& qx = snapshot.stream(updated);
    const Matrix& kx = snapshot.stream(source);
    if (qx.rows() == 0 || kx.rows() == 0) continue;
    const AttnProjection& proj = params.cross[static_cast<std::size_t>(p)];
    GatedAttnResult g =
        gated_attn(project(qx, proj.wq), project(kx, proj.wk), project(kx, proj.wv), params.background(p), params.d_k);
    add_inplace(next.stream(updated), project(g.output, proj.wo));
    if (trace) trace->pathways[static_cast<std::size_t>(p)] = std::move(g);
  }

  for (Stream s : {Stream::features, Stream::text, Stream::visual}) {
    Matrix& x = next.stream(s);
    if (x.rows() > 0) x = ffn_block(x, params.ffn[static_cast<std::size_t>(s)]);
  }
  return next;
}

FusionState run_fusion(const FusionState& state, std::span<const FusionParams> layers) {
  FusionState s = state;
  for (const auto& p : layers) s = fusion_layer(s, p);
  return s;
}

std::array<PathwayActivation, 3> background_activation_stats(const FusionState& state, const FusionParams& params) {
  FusionLayerTrace trace;
  fusion_layer(state, params, &trace);
  std::array<PathwayActivation, 3> out;
  for (Pathway p : kAllPathways) {
    auto& a = out[static_cast<std::size_t>(p)];
    a.pathway = p;
    const auto& g = trace.pathways[static_cast<std::size_t>(p)];
    if (!g || g->background_weight.empty()) continue;
    a.active = true;
    a.queries = g->background_weight.size();
    double sum = 0.0;
    for (double w : g->background_weight) {
      sum += w;
      a.max_background = std::max(a.max_background, w);
    }
    a.mean_background = sum / static_cast<double>(a.queries);
  }
  return out;
}

}  // namespace promptkit
