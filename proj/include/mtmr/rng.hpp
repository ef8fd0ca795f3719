#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <vector>

namespace mtmr {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from (master, tag). Used so every
// consumer (init, shuffle, masks, ...) gets its own decorrelated stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) {
  std::uint64_t x = master ^ (0x6a09e667f3bcc909ull + tag * 0x9e3779b97f4a7c15ull);
  splitmix64(x);
  return splitmix64(x);
}

// xoshiro256** with an explicit, serializable state. The standard library
// engines are avoided on purpose: dataset bytes must be reproducible from a
// seed alone, independent of the standard library build.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
    has_spare_ = false;
    spare_ = 0.0;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via the polar method (cached spare).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, q;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      q = u * u + v * v;
    } while (q >= 1.0 || q == 0.0);
    const double f = std::sqrt(-2.0 * std::log(q) / q);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  // A random point on the unit circle without trig calls, so geometry built
  // from it is bit-stable across libm builds.
  void unit_circle(double& c, double& s) {
    double u, v, q;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      q = u * u + v * v;
    } while (q >= 1.0 || q < 1e-12);
    c = (u * u - v * v) / q;
    s = 2.0 * u * v / q;
  }

  void save(std::ostream& os) const {
    os.write(reinterpret_cast<const char*>(s_), sizeof(s_));
    const std::uint8_t flag = has_spare_ ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&flag), 1);
    os.write(reinterpret_cast<const char*>(&spare_), sizeof(spare_));
  }

  void load(std::istream& is) {
    is.read(reinterpret_cast<char*>(s_), sizeof(s_));
    std::uint8_t flag = 0;
    is.read(reinterpret_cast<char*>(&flag), 1);
    has_spare_ = flag != 0;
    is.read(reinterpret_cast<char*>(&spare_), sizeof(spare_));
  }

  bool operator==(const Rng& o) const {
    return s_[0] == o.s_[0] && s_[1] == o.s_[1] && s_[2] == o.s_[2] && s_[3] == o.s_[3] &&
           has_spare_ == o.has_spare_ && (!has_spare_ || spare_ == o.spare_);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t s_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Seeded Fisher-Yates shuffle of an index vector.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace mtmr
