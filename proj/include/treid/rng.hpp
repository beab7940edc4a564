#ifndef TREID_RNG_HPP
#define TREID_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

namespace treid {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent substream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for a named substream, e.g. derive_seed(seed, {kCameraStream, cam}).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = mix64(seed);
    for (auto t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
    return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    return Rng(derive_seed(seed, tags));
}

// Substream tags.
enum : std::uint64_t {
    kIdentityStream = 1,
    kCameraStream = 2,
    kWalkStream = 3,
    kSplitStream = 4,
    kInitStream = 5,
    kCidStream = 6,
    kTsdStream = 7,
    kCcrStream = 8,
    kPoseStream = 9,
};

}  // namespace treid

#endif  // TREID_RNG_HPP
