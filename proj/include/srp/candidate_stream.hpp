#pragma once

#include "rng.hpp"

#include <cstdint>
#include <limits>

namespace srp {

/// Marked candidates (time, mark) of one particle's Poisson random measure
/// restricted to marks in [0, envelope). Keyed by (seed, particle id), so the
/// same particle sees the same candidates in every model and for every N.
class CandidateStream
{
public:
    CandidateStream(std::uint64_t seed, std::uint64_t id, double envelope)
        : rng_(seed, id), envelope_(envelope)
    {
        advance();
    }

    double time() const noexcept { return time_; }
    double mark() const noexcept { return mark_; }
    double envelope() const noexcept { return envelope_; }

    void advance() noexcept
    {
        if (envelope_ <= 0.0)
        {
            time_ = std::numeric_limits<double>::infinity();
            return;
        }
        time_ += rng_.exponential(envelope_);
        mark_ = rng_.uniform() * envelope_;
    }

private:
    CounterRng rng_;
    double envelope_;
    double time_ = 0.0;
    double mark_ = 0.0;
};

} // namespace srp
