#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <string_view>

namespace distillrank {

// FNV-1a, 64 bit.
class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& str(std::string_view s) {
    const std::uint64_t n = s.size();
    bytes(&n, sizeof n);
    return bytes(s.data(), s.size());
  }
  template <typename T>
  Fnv1a& value(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    return bytes(&v, sizeof v);
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

/// splitmix64 finalizer; used to derive independent seeds from keys.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t seed, const Parts&... parts) {
  Fnv1a h;
  h.value(seed);
  (
      [&] {
        if constexpr (std::is_convertible_v<const Parts&, std::string_view>) {
          h.str(std::string_view(parts));
        } else {
          h.value(parts);
        }
      }(),
      ...);
  return mix64(h.digest());
}

using Rng = std::mt19937_64;

/// Standard normal draw from a generator seeded by `key`; repeated calls with
/// the same key return the same value regardless of call order.
inline double keyed_normal(std::uint64_t key) {
  Rng rng(key);
  std::normal_distribution<double> normal(0.0, 1.0);
  return normal(rng);
}

}  // namespace distillrank
