#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace splitvfu {

// Derives an independent sub-seed from a master seed and a label such as
// "init/encoder/2" or "shuffle". Changing one label's consumer never shifts
// the stream of another.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

// mt19937_64 with distribution code written out explicitly: the standard
// library's distributions are implementation-defined, and every run must be
// a pure function of its seeds.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second variate is cached.
  double normal();

  // Uniform integer in [0, n) without modulo bias. n must be positive.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
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

// 64-bit FNV-1a; used for config fingerprints and anchor hashes.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace splitvfu
