#ifndef MFMETA_RNG_HPP
#define MFMETA_RNG_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace mfmeta {

// Philox4x32-10 counter-based generator (Salmon et al. 2011).
// Key = 64-bit seed, counter = (block index, stream).
class Philox4x32 {
 public:
  using result_type = std::uint32_t;

  explicit Philox4x32(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        ctr_{0, 0, static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)} {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (pos_ == 4) {
      out_ = block(ctr_, key_);
      if (++ctr_[0] == 0) ++ctr_[1];
      pos_ = 0;
    }
    return out_[pos_++];
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    std::uint64_t a = (*this)() >> 5, b = (*this)() >> 6;
    return (static_cast<double>(a) * 67108864.0 + static_cast<double>(b)) * (1.0 / 9007199254740992.0);
  }

  // Exp(1) variate.
  double exponential() { return -std::log1p(-uniform()); }

  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> c, std::array<std::uint32_t, 2> k) {
    constexpr std::uint64_t m0 = 0xD2511F53, m1 = 0xCD9E8D57;
    constexpr std::uint32_t w0 = 0x9E3779B9, w1 = 0xBB67AE85;
    for (int round = 0; round < 10; ++round) {
      std::uint64_t p0 = m0 * c[0], p1 = m1 * c[2];
      c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
      k[0] += w0;
      k[1] += w1;
    }
    return c;
  }

 private:
  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> ctr_;
  std::array<std::uint32_t, 4> out_{};
  int pos_ = 4;
};

// Independent 64-bit key for (seed, a, b), e.g. a = parameter index, b = replica.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  auto r = Philox4x32::block({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                              static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)},
                             {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
  return (static_cast<std::uint64_t>(r[1]) << 32) | r[0];
}

}  // namespace mfmeta

#endif
