#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <string_view>

namespace promptkit {

/// xoshiro256** seeded through splitmix64. Output is identical across platforms and standard
/// libraries, which std::*_distribution does not guarantee.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Fisher-Yates shuffle driven by Rng.
template <typename Seq>
void shuffle(Seq& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

/// FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace promptkit
