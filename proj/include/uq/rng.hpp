#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace uq {

/// Derives an independent stream seed from a master seed and a stage name.
std::uint64_t sub_seed(std::uint64_t master, std::string_view name);

/// mt19937_64 with platform-independent bounded draws (the standard
/// distributions are implementation-defined, which would break replay).
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [0, bound).
  std::size_t uniform_index(std::size_t bound);
  /// Uniform real in [0, 1).
  double uniform_real();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  /// k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> choose(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
};

}  // namespace uq
