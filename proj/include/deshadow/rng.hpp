#pragma once

#include <cstdint>
#include <initializer_list>

namespace deshadow {

/// Named random streams derived from one master seed.
enum class Stream : std::uint64_t {
    init = 1,
    data_order = 2,
    masks = 3,
    discriminator = 4,
    extractor = 5,
    synth = 6,
    subset = 7,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Mixes the master seed with a stream id and any number of counters (epoch, sample index, ...).
inline std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                 std::initializer_list<std::uint64_t> counters = {}) {
    std::uint64_t h = splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(stream)));
    for (std::uint64_t c : counters) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
    return h;
}

}  // namespace deshadow
