#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace layerscope {

// Mixes a base seed with a component name so independent consumers of one
// config seed (sampling, splits, synthetic data) never share a stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) noexcept;

// Portable deterministic generator. The std distributions are implementation
// defined, so bounded integers and normals are derived here directly from the
// mt19937_64 bit stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  // Uniform double in [0, 1).
  double uniform();
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace layerscope
