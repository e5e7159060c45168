#include "support.hpp"

#include "srp/measure.hpp"
#include "srp/order_index.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <random>

using namespace srp;

TEST(OrderIndex, MoveToFrontExamples)
{
    OrderIndex idx({0, 1, 2});
    idx.move_to_front(2);
    EXPECT_EQ(idx.ranks(), (std::vector<std::uint32_t>{1, 2, 0}));
    idx.move_to_front(2);
    EXPECT_EQ(idx.ranks(), (std::vector<std::uint32_t>{1, 2, 0}));
    EXPECT_EQ(idx.particle_at(0), 2u);
    EXPECT_THROW(idx.rank_of(3), std::out_of_range);
    EXPECT_THROW(OrderIndex({0, 0, 1}), std::invalid_argument);
}

TEST(OrderIndex, AgreesWithNaiveArray)
{
    const std::uint32_t n = 257;
    std::vector<std::uint32_t> start(n);
    for (std::uint32_t i = 0; i < n; ++i) start[i] = (i * 101) % n;
    OrderIndex idx(start);
    std::vector<std::uint32_t> order(n); // order[r] = particle at rank r
    for (std::uint32_t i = 0; i < n; ++i) order[start[i]] = i;
    std::mt19937_64 gen(2024);
    for (int op = 0; op < 100000; ++op)
    {
        const auto p = static_cast<std::uint32_t>(gen() % n);
        switch (gen() % 3)
        {
        case 0:
        {
            idx.move_to_front(p);
            const auto it = std::find(order.begin(), order.end(), p);
            std::rotate(order.begin(), it, it + 1);
            break;
        }
        case 1:
            ASSERT_EQ(idx.rank_of(p), std::find(order.begin(), order.end(), p) - order.begin());
            break;
        default: ASSERT_EQ(idx.particle_at(p), order[p]); break;
        }
    }
    const auto r = idx.ranks();
    for (std::uint32_t k = 0; k < n; ++k) ASSERT_EQ(r[order[k]], k);
}

TEST(Engine, SingleParticleStaysOnTop)
{
    const auto spec = test::constant_spec(3.0);
    const auto log = simulate(assign_population(spec, 1), 1.0, 5);
    EXPECT_GT(log.size(), 0u);
    for (std::size_t e = 0; e < log.size(); ++e) EXPECT_EQ(log.pre_rank(e), 0u);
    EXPECT_EQ(replay_ranks(log, 1.0), (std::vector<std::uint32_t>{0}));
}

TEST(Engine, ZeroRatesGiveEmptyLogs)
{
    const auto spec = test::constant_spec(0.0);
    const auto a = assign_population(spec, 50);
    EXPECT_EQ(simulate(a, 1.0, 1).size(), 0u);
    const FlowGrid id(20, 20, 1.0);
    EXPECT_EQ(simulate_flow_driven(a, id, 1.0, 1).size(), 0u);
    const auto run = simulate_coupled(a, id, 1.0, 1);
    EXPECT_EQ(run.original.size(), 0u);
    EXPECT_EQ(run.flow_driven.size(), 0u);
    EXPECT_EQ(run.coupling.decoupled(), 0u);
}

TEST(Engine, TwoParticleTopOccupancy)
{
    const auto spec = test::two_constant(1.0, 3.0, 50.0);
    const double c0 = assign_population(spec, 2).field(0).sup_norm();
    const double target = c0 / 4.0;
    const std::size_t reps = 2000;
    std::vector<double> v;
    for (std::size_t r = 0; r < reps; ++r) v.push_back(test::top_occupancy(spec, 50.0, r + 1));
    double mean = 0.0, var = 0.0;
    for (double x : v) mean += x / reps;
    for (double x : v) var += (x - mean) * (x - mean) / (reps - 1);
    EXPECT_LE(std::abs(mean - target), 3.0 * std::sqrt(var / reps));
}

TEST(Engine, PositionsStayAPermutation)
{
    const auto spec = test::shipped("affine_two_class.yaml");
    const auto a = assign_population(spec, 60);
    const auto log = simulate(a, 1.0, 3);
    ParticleSystemState st(a);
    for (std::size_t e = 0; e < log.size(); ++e)
    {
        ASSERT_EQ(st.rank_of(log.particle(e)), log.pre_rank(e));
        st.jump(log.particle(e), log.time(e));
        auto r = st.ranks();
        std::sort(r.begin(), r.end());
        for (std::uint32_t k = 0; k < 60; ++k) ASSERT_EQ(r[k], k);
    }
    EXPECT_EQ(st.ranks(), replay_ranks(log, 1.0));
}

TEST(Engine, FlowDrivenMatchesOriginalWhenRatesIgnorePosition)
{
    const auto spec = test::two_constant(0.5, 2.0);
    const auto a = assign_population(spec, 200);
    FlowGrid odd(20, 20, 1.0);
    odd.initial(4, 7) = 0.5;
    odd.project();
    const auto orig = simulate(a, 1.0, 11);
    const auto flow = simulate_flow_driven(a, odd, 1.0, 11);
    EXPECT_EQ(orig.times(), flow.times());
    EXPECT_EQ(orig.particle_column(), flow.particle_column());
    const auto run = simulate_coupled(a, odd, 1.0, 11);
    EXPECT_EQ(run.coupling.decoupled(), 0u);
    EXPECT_EQ(run.original.to_bytes(), orig.to_bytes());
    EXPECT_EQ(run.flow_driven.to_bytes(), flow.to_bytes());
}

TEST(Engine, CoupledRunsShareCandidates)
{
    const auto spec = test::shipped("affine_two_class.yaml");
    const auto a = assign_population(spec, 400);
    const FlowGrid id(50, 50, 1.0);
    const auto run = simulate_coupled(a, id, 1.0, 4);
    EXPECT_EQ(run.original.to_bytes(), simulate(a, 1.0, 4).to_bytes());
    EXPECT_EQ(run.flow_driven.to_bytes(), simulate_flow_driven(a, id, 1.0, 4).to_bytes());
    EXPECT_GT(run.coupling.decoupled(), 0u);
    // before sigma_i both copies of i jump at the same times
    const LogIndex io(run.original), iflow(run.flow_driven);
    for (std::uint32_t i = 0; i < 400; ++i)
    {
        const double s = run.coupling.sigma[i];
        std::vector<double> jo(io.jumps_begin(i), io.jumps_end(i)), jf(iflow.jumps_begin(i), iflow.jumps_end(i));
        jo.erase(std::lower_bound(jo.begin(), jo.end(), s), jo.end());
        jf.erase(std::lower_bound(jf.begin(), jf.end(), s), jf.end());
        ASSERT_EQ(jo, jf) << "particle " << i;
    }
}

TEST(Engine, LogsAreByteReproducible)
{
    const auto spec = test::shipped("affine_two_class.yaml");
    const auto a = assign_population(spec, 300);
    const auto x = simulate(a, 1.0, 8).to_bytes();
    EXPECT_EQ(x, simulate(a, 1.0, 8).to_bytes());
    EXPECT_NE(x, simulate(a, 1.0, 9).to_bytes());
    const auto back = EventLog::from_bytes(x, spec);
    EXPECT_EQ(back.to_bytes(), x);
    EXPECT_THROW(EventLog::from_bytes(x, test::constant_spec(1.0)), std::runtime_error);
    EXPECT_THROW(EventLog::from_bytes(x.substr(0, x.size() - 3), spec), std::runtime_error);
}

TEST(Engine, HorizonMustMatchTheSpec)
{
    const auto spec = test::constant_spec(1.0, 2.0);
    EXPECT_THROW(simulate(assign_population(spec, 5), 3.0, 1), std::invalid_argument);
}

TEST(Engine, LargeSystemStaysFast)
{
    const auto spec = test::shipped("affine_two_class.yaml");
    const auto a = assign_population(spec, 100000);
    const auto start = std::chrono::steady_clock::now();
    const auto log = simulate(a, 1.0, 1);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EXPECT_GT(log.size(), 100000u);
    EXPECT_LT(secs, 10.0);
}
