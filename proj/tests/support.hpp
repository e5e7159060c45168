#pragma once

#include "srp/config.hpp"
#include "srp/intensity.hpp"
#include "srp/ranking_process.hpp"

#include <memory>
#include <string>
#include <vector>

namespace srp::test {

inline std::shared_ptr<const PopulationSpec> one_class(IntensityField w, double horizon = 1.0)
{
    PopulationClass c;
    c.name = "only";
    c.weight = 1.0;
    c.field = std::move(w);
    return std::make_shared<const PopulationSpec>(horizon, std::vector<PopulationClass>{c});
}

inline std::shared_ptr<const PopulationSpec> constant_spec(double rate, double horizon = 1.0)
{
    return one_class(IntensityField::constant(rate, horizon), horizon);
}

inline std::shared_ptr<const PopulationSpec> two_constant(double c1, double c2, double horizon = 1.0)
{
    PopulationClass a{"a", 0.5, IntensityField::constant(c1, horizon), {}};
    PopulationClass b{"b", 0.5, IntensityField::constant(c2, horizon), {}};
    return std::make_shared<const PopulationSpec>(horizon, std::vector<PopulationClass>{a, b});
}

inline std::string spec_path(const std::string& name) { return std::string(SRP_SPEC_DIR) + "/" + name; }

inline std::shared_ptr<const PopulationSpec> shipped(const std::string& name) { return load_spec(spec_path(name)).spec; }

/// Fraction of [0,T] that particle 0 spends at rank 0, N = 2. The initial
/// order is drawn from the stationary law so the estimate is unbiased.
inline double top_occupancy(const std::shared_ptr<const PopulationSpec>& spec, double horizon, std::uint64_t seed)
{
    auto a = assign_population(spec, 2);
    const double c0 = a.field(0).sup_norm();
    const double c1 = a.field(1).sup_norm();
    CounterRng start(seed, 0xfffffffULL);
    const bool first_on_top = start.uniform() < c0 / (c0 + c1);
    a.slot = first_on_top ? std::vector<std::uint32_t>{0, 1} : std::vector<std::uint32_t>{1, 0};
    const auto log = simulate(a, horizon, seed);
    bool top = first_on_top;
    double last = 0.0;
    double acc = 0.0;
    for (std::size_t e = 0; e < log.size(); ++e)
    {
        if (top) acc += log.time(e) - last;
        last = log.time(e);
        top = log.particle(e) == 0;
    }
    if (top) acc += horizon - last;
    return acc / horizon;
}

} // namespace srp::test
