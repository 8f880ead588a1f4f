#ifndef DCR_RANDOM_HPP
#define DCR_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace dcr {

/// Seeded generator with platform-independent uniform/normal draws.
/// std::*_distribution output is implementation-defined, so the mappings
/// from raw 64-bit words are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Uniform integer in [0, n) without modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  /// Fisher-Yates.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fixed-offset sub-seeds so that one user-facing seed drives every stream.
namespace seeds {
inline constexpr std::uint64_t kFeatures = 0;
inline constexpr std::uint64_t kGroundTruth = 1;
inline constexpr std::uint64_t kPartition = 2;
inline constexpr std::uint64_t kProfiles = 3;
inline constexpr std::uint64_t kAnnotations = 4;
inline constexpr std::uint64_t kSplit = 5;
inline constexpr std::uint64_t kModel = 6;
inline constexpr std::uint64_t kBatches = 7;

inline std::uint64_t derive(std::uint64_t seed, std::uint64_t offset) {
  // splitmix64 finalizer keeps neighbouring seeds decorrelated
  std::uint64_t z = seed * 16 + offset + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace seeds

}  // namespace dcr

#endif  // DCR_RANDOM_HPP
