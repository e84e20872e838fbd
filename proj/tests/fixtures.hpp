#pragma once

// Seeded synthetic annotation fixtures shared by the data-engine tests.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "promptkit/data_engine.hpp"
#include "promptkit/rng.hpp"

namespace fixture {

using namespace promptkit;

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> v{"cat", "kitten", "dog", "puppy", "car", "truck", "tree", "person"};
  return v;
}

// Pairs (cat, kitten), (dog, puppy), (car, truck) share most of their direction.
inline EmbeddingProvider embeddings(std::uint64_t seed = 7) {
  Rng rng(seed);
  const std::size_t dim = 16;
  std::map<std::string, Vector> table;
  const auto& vocab = vocabulary();
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    Vector v(dim);
    for (double& x : v) x = rng.normal();
    if (i % 2 == 1 && i < 6) {
      const Vector& base = table.at(vocab[i - 1]);
      for (std::size_t c = 0; c < dim; ++c) v[c] = base[c] + 0.5 * v[c];
    }
    table.emplace(vocab[i], v);
  }
  return EmbeddingProvider::from_table(table);
}

inline BoxXYXY random_box(Rng& rng) {
  const double w = rng.uniform(0.05, 0.4), h = rng.uniform(0.05, 0.4);
  const double x = rng.uniform(0.0, 1.0 - w), y = rng.uniform(0.0, 1.0 - h);
  return {x, y, x + w, y + h};
}

inline BoxXYXY jitter(const BoxXYXY& b, double amount, Rng& rng) {
  const auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  double x1 = clamp01(b.x1 + amount * rng.uniform(-1, 1)), x2 = clamp01(b.x2 + amount * rng.uniform(-1, 1));
  double y1 = clamp01(b.y1 + amount * rng.uniform(-1, 1)), y2 = clamp01(b.y2 + amount * rng.uniform(-1, 1));
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  return {x1, y1, x2, y2};
}

struct ImagePair {
  AnnotationSet top_down;
  AnnotationSet bottom_up;
};

inline std::vector<ImagePair> images(std::size_t n_images, std::uint64_t seed) {
  Rng rng(seed);
  const auto& vocab = vocabulary();
  std::vector<ImagePair> out;
  for (std::size_t img = 0; img < n_images; ++img) {
    ImagePair p;
    const std::string id = "img_" + std::to_string(img);
    p.top_down = {id, 640, 480, AnnotationSource::top_down, {}};
    p.bottom_up = {id, 640, 480, AnnotationSource::bottom_up, {}};
    const std::size_t n = rng.below(7);
    for (std::size_t i = 0; i < n; ++i) {
      const BoxXYXY box = random_box(rng);
      const std::size_t tag = rng.below(vocab.size());
      p.top_down.instances.push_back({box, vocab[tag], rng.uniform(0.3, 1.0), std::nullopt, std::nullopt});
      if (rng.uniform() < 0.8) {
        std::size_t other = tag;
        const double u = rng.uniform();
        if (u < 0.2) other = tag ^ 1u;  // synonym partner
        else if (u < 0.35) other = rng.below(vocab.size());
        p.bottom_up.instances.push_back({jitter(box, rng.uniform(0.0, 0.1), rng), vocab[other], rng.uniform(0.3, 1.0),
                                         std::nullopt, std::nullopt});
      }
    }
    for (std::size_t extra = rng.below(3); extra > 0; --extra) {
      p.bottom_up.instances.push_back({random_box(rng), vocab[rng.below(vocab.size())], rng.uniform(0.3, 1.0),
                                       std::nullopt, std::nullopt});
    }
    Rng order(rng.next_u64());
    shuffle(p.bottom_up.instances, order);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace fixture
