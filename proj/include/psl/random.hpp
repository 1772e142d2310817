#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace psl {

/// Seeded generator with platform-independent draws.
///
/// std::mt19937_64 output is fully specified by the standard; the
/// distributions in <random> are not, so the conversions live here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal (Box-Muller, one value per call).
  double normal();

  /// Uniform integer in [0, bound), unbiased.
  std::uint64_t below(std::uint64_t bound);

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

/// Stable seed for a named stochastic component: the first eight bytes of
/// SHA-256("<base>/<key>") read little-endian.
std::uint64_t derive_seed(std::uint64_t base, std::string_view key);

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace psl
