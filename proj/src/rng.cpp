#include "uq/rng.hpp"

#include <limits>
#include <numeric>
#include <string>

#include "uq/core.hpp"
#include "uq/hash.hpp"

namespace uq {

std::uint64_t sub_seed(std::uint64_t master, std::string_view name) {
  std::string digest = sha256_hex(std::to_string(master) + "/" + std::string(name));
  return std::stoull(digest.substr(0, 16), nullptr, 16);
}

std::size_t SeededRng::uniform_index(std::size_t bound) {
  if (bound == 0) throw Error("uniform_index with empty range");
  const std::uint64_t b = bound;
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % b;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % b);
}

double SeededRng::uniform_real() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::vector<std::size_t> SeededRng::choose(std::size_t n, std::size_t k) {
  if (k > n) throw Error("cannot choose " + std::to_string(k) + " of " + std::to_string(n));
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + uniform_index(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace uq
