#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

namespace xbert {

// Deterministic xoshiro256++ generator. All randomness in the project flows
// through this class so that runs are reproducible bit-for-bit from a seed,
// independent of the platform's std::random distributions.
class Rng {
 public:
  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : state_) w = splitmix64(x);
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
    has_spare_ = false;
    spare_ = 0.0;
  }

  // Independent stream for (master seed, stream index); used to make dataset
  // generation order- and worker-count-independent.
  static Rng derive(uint64_t master_seed, uint64_t stream) {
    uint64_t x = master_seed;
    uint64_t a = splitmix64(x);
    x = stream ^ 0x6a09e667f3bcc909ull;
    uint64_t b = splitmix64(x);
    return Rng(a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float uniform_float(float lo, float hi) {
    return lo + static_cast<float>(uniform()) * (hi - lo);
  }

  // Uniform integer in [0, n); n > 0. Rejection sampling keeps it unbiased.
  uint64_t uniform_int(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  // Standard normal via Box-Muller; the spare half is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double two_pi = 6.283185307179586;
    const double u = 1.0 - uniform();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = uniform() * two_pi;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  float normal_float(float mu, float sigma) {
    return mu + sigma * static_cast<float>(normal());
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(uniform_int(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  // Serialized state: 4 state words, spare flag, spare payload bits.
  std::array<uint64_t, 6> save_state() const {
    std::array<uint64_t, 6> out{};
    for (int i = 0; i < 4; ++i) out[static_cast<size_t>(i)] = state_[static_cast<size_t>(i)];
    out[4] = has_spare_ ? 1u : 0u;
    uint64_t bits = 0;
    static_assert(sizeof(double) == sizeof(uint64_t));
    std::memcpy(&bits, &spare_, sizeof(bits));
    out[5] = bits;
    return out;
  }

  void restore_state(const std::array<uint64_t, 6>& s) {
    for (int i = 0; i < 4; ++i) state_[static_cast<size_t>(i)] = s[static_cast<size_t>(i)];
    has_spare_ = s[4] != 0;
    std::memcpy(&spare_, &s[5], sizeof(spare_));
  }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

  std::array<uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace xbert
