#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace srp {

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based random stream: output k is a keyed hash of k, so a stream is
/// fully determined by (seed, stream id) and costs 24 bytes of state. One
/// stream per particle lets two models (or two particle counts) consume the
/// exact same marked candidates.
class CounterRng
{
public:
    using result_type = std::uint64_t;

    CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
        : key_hi_(mix64(seed ^ 0x6a09e667f3bcc909ULL)),
          key_lo_(mix64(stream + mix64(seed)))
    {
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept
    {
        return mix64(mix64(counter_++ + key_hi_) ^ key_lo_);
    }

    /// Uniform on the open interval (0,1).
    double uniform() noexcept
    {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    double exponential(double rate) noexcept { return -std::log(uniform()) / rate; }

    std::uint64_t draws() const noexcept { return counter_; }

private:
    std::uint64_t key_hi_;
    std::uint64_t key_lo_;
    std::uint64_t counter_ = 0;
};

} // namespace srp
