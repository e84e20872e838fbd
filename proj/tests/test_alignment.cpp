#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "oracles.hpp"
#include "promptkit/alignment.hpp"
#include "promptkit/rng.hpp"

using namespace promptkit;

namespace {

Vector unit(std::size_t d, Rng& rng) {
  Vector v(d);
  for (double& x : v) x = rng.normal();
  return normalized(v);
}

PromptEmbedding emb(Vector v, PromptKind kind) { return {std::move(v), kind, std::nullopt, true}; }

AlignBatch random_batch(std::size_t k, std::size_t d, std::size_t n_cats, Rng& rng) {
  AlignBatch b;
  for (std::size_t i = 0; i < k; ++i) {
    b.pairs.push_back({emb(unit(d, rng), PromptKind::visual), emb(unit(d, rng), PromptKind::text),
                       "c" + std::to_string(i % n_cats), "ds"});
  }
  return b;
}

std::vector<std::vector<double>> rows_of(const Matrix& m) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < m.rows(); ++i) out.emplace_back(m.row(i).begin(), m.row(i).end());
  return out;
}

SamplerManifest random_manifest(Rng& rng) {
  SamplerManifest m;
  m.batch_size = 1 + rng.below(6);
  m.seed = rng.next_u64();
  const std::size_t n_ds = 1 + rng.below(4);
  const std::size_t n = 1 + rng.below(40);
  for (std::size_t i = 0; i < n; ++i) m.samples.push_back({"s" + std::to_string(i), "d" + std::to_string(rng.below(n_ds))});
  return m;
}

}  // namespace

TEST_SUITE("alignment") {
  TEST_CASE("orthonormal matched pairs at unit temperature") {
    const Matrix v{{1, 0}, {0, 1}};
    const AlignLossResult r = align_loss(v, v, 1.0);
    CHECK(r.loss == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-14));
  }

  TEST_CASE("identical embeddings give ln K") {
    for (std::size_t k : {2u, 3u, 7u, 16u}) {
      Matrix m(k, 3);
      for (std::size_t i = 0; i < k; ++i) m.row(i)[0] = 1.0;
      CHECK(std::abs(align_loss(m, m, 0.07).loss - std::log(static_cast<double>(k))) <= 1e-12);
    }
  }

  TEST_CASE("loss agrees with a direct log-sum-exp evaluation") {
    Rng rng(501);
    for (int t = 0; t < 50; ++t) {
      const AlignBatch b = random_batch(2 + rng.below(8), 6, 3, rng);
      const double temp = rng.uniform(0.05, 2.0);
      CHECK(align_loss(b, temp).loss ==
            doctest::Approx(oracle::contrastive(rows_of(b.visual_matrix()), rows_of(b.text_matrix()), temp)).epsilon(1e-12));
    }
  }

  TEST_CASE("analytic gradients match central differences, K=8 dim=16 seed 42") {
    Rng rng(42);
    const AlignBatch b = random_batch(8, 16, 4, rng);
    const Matrix v = b.visual_matrix(), t = b.text_matrix();
    const AlignLossResult r = align_loss(v, t, kDefaultAlignTemperature);
    const auto fv = [&](const std::vector<double>& q) { return align_loss(Matrix(8, 16, q), t, kDefaultAlignTemperature).loss; };
    const auto ft = [&](const std::vector<double>& q) { return align_loss(v, Matrix(8, 16, q), kDefaultAlignTemperature).loss; };
    const std::vector<double> pv(v.data().begin(), v.data().end()), pt(t.data().begin(), t.data().end());
    CHECK(oracle::max_rel_err({r.grad_visual.data().begin(), r.grad_visual.data().end()}, oracle::central_diff(fv, pv, 1e-5)) < 1e-4);
    CHECK(oracle::max_rel_err({r.grad_text.data().begin(), r.grad_text.data().end()}, oracle::central_diff(ft, pt, 1e-5)) < 1e-4);
  }

  TEST_CASE("negative-key gradient matches central differences") {
    Rng rng(43);
    const AlignBatch b = random_batch(5, 6, 3, rng);
    const Matrix v = b.visual_matrix(), t = b.text_matrix();
    Matrix neg(5, 6);
    for (std::size_t i = 0; i < 5; ++i) {
      const Vector u = unit(6, rng);
      std::copy(u.begin(), u.end(), neg.row(i).begin());
    }
    const AlignLossResult r = align_loss(v, t, 0.1, &neg);
    const auto fn = [&](const std::vector<double>& q) {
      const Matrix n(5, 6, q);
      return align_loss(v, t, 0.1, &n).loss;
    };
    const std::vector<double> pn(neg.data().begin(), neg.data().end());
    CHECK(oracle::max_rel_err({r.grad_negatives.data().begin(), r.grad_negatives.data().end()}, oracle::central_diff(fn, pn, 1e-5)) < 1e-4);
  }

  TEST_CASE("joint permutation of pairs leaves the loss unchanged") {
    Rng rng(502);
    for (int t = 0; t < 50; ++t) {
      AlignBatch b = random_batch(2 + rng.below(10), 8, 3, rng);
      const double before = align_loss(b).loss;
      shuffle(b.pairs, rng);
      CHECK(std::abs(align_loss(b).loss - before) <= 1e-12);
    }
  }

  TEST_CASE("a small gradient step lowers the loss") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      const AlignBatch b = random_batch(2 + rng.below(6), 8, 3, rng);
      Matrix v = b.visual_matrix(), t = b.text_matrix();
      const AlignLossResult r = align_loss(v, t, 0.07);
      for (std::size_t i = 0; i < v.data().size(); ++i) {
        v.data()[i] -= 1e-4 * r.grad_visual.data()[i];
        t.data()[i] -= 1e-4 * r.grad_text.data()[i];
      }
      CHECK(align_loss(v, t, 0.07).loss < r.loss);
    }
  }

  TEST_CASE("a dominant diagonal keeps each direction below ln K") {
    Rng rng(503);
    int seen = 0;
    for (int t = 0; t < 500 && seen < 50; ++t) {
      const AlignBatch b = random_batch(2 + rng.below(5), 4, 2, rng);
      const Matrix v = b.visual_matrix(), tx = b.text_matrix();
      const Matrix s = matmul_transposed(v, tx);
      bool dominant = true;
      for (std::size_t i = 0; i < s.rows(); ++i)
        for (std::size_t j = 0; j < s.cols(); ++j)
          if (i != j) dominant &= s(i, i) > s(i, j) && s(i, i) > s(j, i);
      if (!dominant) continue;
      ++seen;
      // Both directions share the bound, so the mean of the two does as well.
      CHECK(align_loss(v, tx, 1.0).loss < std::log(static_cast<double>(s.rows())));
    }
    CHECK(seen > 0);
  }

  TEST_CASE("align input errors") {
    CHECK_THROWS_AS(align_loss(Matrix{{1, 0}}, Matrix{{1, 0}}, 0.07), std::invalid_argument);
    CHECK_THROWS_AS(align_loss(Matrix{{1, 0}, {0, 1}}, Matrix{{1, 0}, {0, 1}}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(align_loss(Matrix{{1, 0}, {0, 1}}, Matrix{{1, 0, 0}, {0, 1, 0}}, 1.0), std::invalid_argument);
    AlignBatch b;
    b.pairs.push_back({emb({2.0, 0.0}, PromptKind::visual), emb({1.0, 0.0}, PromptKind::text), "a", "d"});
    CHECK_THROWS_AS(b.validate(), std::invalid_argument);
  }

  TEST_CASE("negatives for two categories are each other's embedding") {
    AlignBatch b;
    b.pairs.push_back({emb({1, 0}, PromptKind::visual), emb({1, 0}, PromptKind::text), "a", "d"});
    b.pairs.push_back({emb({0, 1}, PromptKind::visual), emb({0, 1}, PromptKind::text), "b", "d"});
    const auto neg = build_negative_prompts(b);
    CHECK(neg.size() == 2);
    CHECK(neg.at("a").vec == Vector{0, 1});
    CHECK(neg.at("b").vec == Vector{1, 0});
  }

  TEST_CASE("negative of e1 against e2 and e3 is their normalized sum") {
    AlignBatch b;
    b.pairs.push_back({emb({1, 0, 0}, PromptKind::visual), emb({1, 0, 0}, PromptKind::text), "a", "d"});
    b.pairs.push_back({emb({0, 1, 0}, PromptKind::visual), emb({0, 1, 0}, PromptKind::text), "b", "d"});
    b.pairs.push_back({emb({0, 0, 1}, PromptKind::visual), emb({0, 0, 1}, PromptKind::text), "c", "d"});
    const Vector n = build_negative_prompts(b).at("a").vec;
    const double r = 1.0 / std::sqrt(2.0);
    CHECK(n[0] == 0.0);
    CHECK(n[1] == doctest::Approx(r).epsilon(1e-15));
    CHECK(n[2] == doctest::Approx(r).epsilon(1e-15));
  }

  TEST_CASE("negatives are unit, order-invariant, and equal a leave-one-category-out mean") {
    Rng rng(504);
    for (int t = 0; t < 30; ++t) {
      AlignBatch b = random_batch(3 + rng.below(10), 5, 2 + rng.below(3), rng);
      const auto neg = build_negative_prompts(b);
      for (const auto& [cat, p] : neg) {
        CHECK(std::abs(l2_norm(p.vec) - 1.0) <= 1e-12);
        Vector mean(5, 0.0);
        std::size_t n = 0;
        for (const auto& pair : b.pairs)
          if (pair.category != cat) {
            for (std::size_t e = 0; e < 5; ++e) mean[e] += pair.visual.vec[e];
            ++n;
          }
        for (double& x : mean) x /= static_cast<double>(n);
        const Vector expect = normalized(mean);
        for (std::size_t e = 0; e < 5; ++e) CHECK(p.vec[e] == doctest::Approx(expect[e]).epsilon(1e-12));
      }
      shuffle(b.pairs, rng);
      const auto again = build_negative_prompts(b);
      for (const auto& [cat, p] : neg) CHECK(again.at(cat).vec == p.vec);
    }
  }

  TEST_CASE("a single category has no negatives") {
    Rng rng(505);
    CHECK_THROWS_AS(build_negative_prompts(random_batch(3, 4, 1, rng)), std::invalid_argument);
  }

  TEST_CASE("batch loss with negatives raises the loss") {
    Rng rng(506);
    const AlignBatch b = random_batch(6, 8, 3, rng);
    CHECK(align_loss(b, 0.07, true).loss > align_loss(b, 0.07, false).loss);
  }

  TEST_CASE("single dataset of ten in batches of four") {
    SamplerManifest m;
    m.batch_size = 4;
    m.seed = 3;
    for (int i = 0; i < 10; ++i) m.samples.push_back({"s" + std::to_string(i), "coco"});
    const auto batches = sample_batches(m);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].sample_ids.size() == 4);
    CHECK(batches[1].sample_ids.size() == 4);
    CHECK(batches[2].sample_ids.size() == 2);
    for (const auto& b : batches) CHECK(b.dataset == "coco");
  }

  TEST_CASE("two datasets, batch two, seed one") {
    SamplerManifest m;
    m.batch_size = 2;
    m.seed = 1;
    for (int i = 0; i < 3; ++i) m.samples.push_back({"a" + std::to_string(i), "A"});
    for (int i = 0; i < 3; ++i) m.samples.push_back({"b" + std::to_string(i), "B"});
    const auto batches = sample_batches(m);
    std::multiset<std::string> seen;
    for (const auto& b : batches)
      for (const auto& id : b.sample_ids) {
        seen.insert(id);
        CHECK(id[0] == (b.dataset == "A" ? 'a' : 'b'));
      }
    CHECK(seen.size() == 6);
    CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == 6);
    CHECK(sample_batches(m) == batches);
  }

  TEST_CASE("random manifests give pure batches and exact coverage") {
    Rng rng(507);
    for (int t = 0; t < 300; ++t) {
      const SamplerManifest m = random_manifest(rng);
      std::map<std::string, std::string> dataset_of;
      for (const auto& s : m.samples) dataset_of[s.id] = s.dataset;
      std::multiset<std::string> seen;
      for (const auto& b : sample_batches(m)) {
        CHECK(!b.sample_ids.empty());
        CHECK(b.sample_ids.size() <= m.batch_size);
        for (const auto& id : b.sample_ids) {
          CHECK(dataset_of.at(id) == b.dataset);
          seen.insert(id);
        }
      }
      CHECK(seen.size() == m.samples.size());
      for (const auto& s : m.samples) CHECK(seen.count(s.id) == 1);
    }
  }

  TEST_CASE("manifest parsing") {
    const auto m = parse_manifest(R"({"batch_size": 2, "seed": 9, "samples": [{"id": "x", "dataset": "d"}]})");
    CHECK(m.batch_size == 2);
    CHECK(m.seed == 9);
    CHECK(m.samples.size() == 1);
    CHECK_THROWS_AS(parse_manifest(R"({"batch_size": 0, "samples": [{"id": "x", "dataset": "d"}]})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_manifest(R"({"batch_size": 1, "samples": []})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_manifest(R"({"batch_size": 1, "samples": [{"id": "x", "dataset": ""}]})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_manifest("{"), std::runtime_error);
  }
}
