#pragma once

#include <array>
#include <cstdint>

namespace mfcov {

/// Philox4x32-10 counter-based generator.
/// Maps a 128-bit counter and 64-bit key to 128 random bits.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Sequential stream over Philox blocks. The key is the seed; the counter's
/// upper half is the stream id, the lower half the block index, so
/// (seed, stream) pairs give independent, platform-independent sequences.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64();
    /// Uniform on (0, 1), never exactly 0 or 1.
    double uniform();
    /// Standard normal via Box-Muller.
    double normal();
    /// Uniform integer on [lo, hi].
    int uniform_int(int lo, int hi);

private:
    std::array<std::uint32_t, 2> key_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int used_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace mfcov
