#pragma once

// Counter-based random streams. Every draw is a pure function of
// (key, counter), so results do not depend on how work is scheduled.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>

namespace mkv::rng {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a parent seed and a path of indices.
inline constexpr std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = splitmix64(parent);
  for (std::uint64_t v : path) h = splitmix64(h ^ splitmix64(v + 0x632BE59BD9B4E019ULL));
  return h;
}

/// Stream tags used to split one simulation seed into independent streams.
enum class Stream : std::uint64_t {
  brownian = 1,
  initial_state = 2,
  estimator_init = 3,
  proxy_brownian = 4,
  proxy_initial_state = 5,
};

/// Philox4x32-10 block function.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit constexpr Philox4x32(std::uint64_t key) noexcept
      : k0_(static_cast<std::uint32_t>(key)), k1_(static_cast<std::uint32_t>(key >> 32)) {}

  constexpr Block operator()(std::uint64_t counter_hi, std::uint64_t counter_lo) const noexcept {
    Block c{static_cast<std::uint32_t>(counter_lo), static_cast<std::uint32_t>(counter_lo >> 32),
            static_cast<std::uint32_t>(counter_hi), static_cast<std::uint32_t>(counter_hi >> 32)};
    std::uint32_t k0 = k0_;
    std::uint32_t k1 = k1_;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kM0} * c[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * c[2];
      c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k0, static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k1, static_cast<std::uint32_t>(p0)};
      k0 += kW0;
      k1 += kW1;
    }
    return c;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53U;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57U;
  static constexpr std::uint32_t kW0 = 0x9E3779B9U;
  static constexpr std::uint32_t kW1 = 0xBB67AE85U;

  std::uint32_t k0_;
  std::uint32_t k1_;
};

/// Uniform on the open interval (0, 1). Uses 52 bits so that the half-offset
/// midpoint is exactly representable and never rounds up to 1.
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
  const std::uint64_t bits = (std::uint64_t{hi} << 32 | lo) >> 12;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-52;
}

/// Addressable stream of uniforms and standard normals. Draw (row, j) is
/// always the same number for a given key.
class CounterStream {
 public:
  explicit constexpr CounterStream(std::uint64_t key) noexcept : philox_(key) {}

  std::array<double, 2> uniform_pair(std::uint64_t row, std::uint64_t block) const noexcept {
    const auto r = philox_(row, block);
    return {to_open_unit(r[0], r[1]), to_open_unit(r[2], r[3])};
  }

  /// Box-Muller pair for block `block` of row `row`.
  std::array<double, 2> normal_pair(std::uint64_t row, std::uint64_t block) const noexcept {
    const auto [u1, u2] = uniform_pair(row, block);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

  double normal(std::uint64_t row, std::uint64_t index) const noexcept {
    return normal_pair(row, index / 2)[index % 2];
  }

  double uniform(std::uint64_t row, std::uint64_t index) const noexcept {
    return uniform_pair(row, index / 2)[index % 2];
  }

  /// Fills `out` with `scale * z_j`, z_j standard normal draws of row `row`.
  void fill_normal(std::uint64_t row, double scale, std::span<double> out) const noexcept {
    const std::size_t n = out.size();
    std::size_t j = 0;
    for (; j + 1 < n; j += 2) {
      const auto z = normal_pair(row, j / 2);
      out[j] = scale * z[0];
      out[j + 1] = scale * z[1];
    }
    if (j < n) out[j] = scale * normal_pair(row, j / 2)[0];
  }

 private:
  Philox4x32 philox_;
};

inline CounterStream make_stream(std::uint64_t seed, Stream tag) noexcept {
  return CounterStream(derive_seed(seed, {static_cast<std::uint64_t>(tag)}));
}

}  // namespace mkv::rng
