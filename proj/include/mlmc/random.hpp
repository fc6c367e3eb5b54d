#pragma once

#include <array>
#include <cstdint>

namespace mlmc {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// Every (key, counter) pair maps to an independent block of 128 random bits,
/// so any sample of any level can be regenerated without replaying the
/// samples before it.
class Philox4x32 {
  public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr Counter generate(Counter ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            ctr = single_round(ctr, key);
        }
        return ctr;
    }

  private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    static constexpr Counter single_round(const Counter& c, const Key& k) noexcept {
        const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

/// Maps 64 random bits to a double strictly inside (0,1).
///
/// Uses the top 52 bits as k and returns (k + 1/2) * 2^-52, which is exact in
/// double precision; the extreme values are 2^-53 and 1 - 2^-53.
constexpr double bits_to_open_uniform(std::uint64_t bits) noexcept {
    constexpr double kScale = 1.0 / 4503599627370496.0;  // 2^-52
    return (static_cast<double>(bits >> 12) + 0.5) * kScale;
}

/// Deterministic random stream for one Monte Carlo sample.
///
/// A stream is identified by (seed, stream id, sample index); the stream id
/// is the level for estimator samples. Draws are consumed sequentially.
class SampleStream {
  public:
    SampleStream(std::uint64_t seed, std::uint32_t stream_id, std::uint64_t sample_index) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_id_(stream_id),
          sample_lo_(static_cast<std::uint32_t>(sample_index)),
          sample_hi_(static_cast<std::uint32_t>(sample_index >> 32)) {}

    /// Next 64 random bits.
    std::uint64_t next_bits() noexcept {
        if (cursor_ == kWords) {
            refill();
        }
        return words_[cursor_++];
    }

    /// Next uniform in the open interval (0,1).
    double next_uniform() noexcept { return bits_to_open_uniform(next_bits()); }

    /// Number of 64-bit draws consumed so far.
    std::uint64_t position() const noexcept { return 2 * static_cast<std::uint64_t>(block_) - (kWords - cursor_); }

  private:
    static constexpr unsigned kWords = 2;

    void refill() noexcept {
        const auto out = Philox4x32::generate({block_, stream_id_, sample_lo_, sample_hi_}, key_);
        words_[0] = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
        words_[1] = (static_cast<std::uint64_t>(out[2]) << 32) | out[3];
        ++block_;
        cursor_ = 0;
    }

    Philox4x32::Key key_;
    std::uint32_t stream_id_;
    std::uint32_t sample_lo_;
    std::uint32_t sample_hi_;
    std::uint32_t block_ = 0;
    unsigned cursor_ = kWords;
    std::array<std::uint64_t, kWords> words_{};
};

/// SplitMix64 finaliser; used to derive independent seeds for repeated runs.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace mlmc
