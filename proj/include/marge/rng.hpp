#pragma once

#include <cstdint>

namespace marge {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// SplitMix64 sequence. Cheap to construct, so one stream is made per sample.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) noexcept : state_(key) {}

  std::uint64_t next_u64() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n) by multiply-shift; bias is below 2^-32 for n < 2^32.
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

/// Purposes keep streams used for different phases of a run disjoint.
enum class Purpose : std::uint32_t {
  kEnvLabels = 1,
  kInitCandidates,
  kExplore,
  kSelect,
  kPairs,
  kEval,
  kSft,
  kCurve,
  kCustom,
};

/// Counter-based stream keying. A stream is addressed by
/// (seed, purpose, round, task, state, sample), so sampling order and worker
/// scheduling never change the values drawn.
class StreamFactory {
 public:
  explicit StreamFactory(std::uint64_t seed) noexcept : key_(mix64(seed ^ 0x6D61726765ULL)) {}

  StreamFactory derive(Purpose purpose, std::uint64_t round) const noexcept {
    StreamFactory out = *this;
    out.key_ = mix64(mix64(key_ ^ static_cast<std::uint64_t>(purpose)) + round);
    return out;
  }

  RngStream stream(std::uint64_t task, std::uint64_t state, std::uint64_t sample) const noexcept {
    std::uint64_t k = mix64(key_ + task);
    k = mix64(k ^ (state * 0xD1B54A32D192ED03ULL));
    k = mix64(k + sample);
    return RngStream(k);
  }

 private:
  std::uint64_t key_;
};

}  // namespace marge
