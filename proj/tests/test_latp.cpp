#include "srp/latp.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace srp;

namespace {

LatpIntensity one_plus_s() { return LatpIntensity([](double s, double) { return 1.0 + s; }, 2.0); }

} // namespace

TEST(OmegaIntegral, Examples)
{
    EXPECT_EQ(omega_integral(LatpIntensity::constant(0.0), 0.0, 1.0, 1e-3), 0.0);
    EXPECT_DOUBLE_EQ(omega_integral(LatpIntensity::constant(2.0), 0.0, 0.5, 1e-3), 1.0);
    const LatpIntensity ramp([](double s, double u) { return u - s; }, 1.0);
    EXPECT_NEAR(omega_integral(ramp, 0.2, 1.0, 1e-3), 0.32, 1e-12);
}

TEST(SampleArrivals, ZeroIntensityHasNoArrivals)
{
    CounterRng rng(1, 0);
    EXPECT_TRUE(sample_arrivals(LatpIntensity::constant(0.0), 5.0, 1.0, rng).times.empty());
}

TEST(SampleArrivals, ConstantRateCountIsPoisson)
{
    const double c = 1.7, horizon = 2.0;
    const std::size_t reps = 10000;
    double sum = 0.0;
    for (std::size_t r = 0; r < reps; ++r)
    {
        CounterRng rng(42, r);
        sum += static_cast<double>(sample_arrivals(LatpIntensity::constant(c), horizon, 2.0, rng).times.size());
    }
    const double mean = sum / reps;
    EXPECT_LE(std::abs(mean - c * horizon), 3.0 * std::sqrt(c * horizon / reps));
}

TEST(SampleArrivals, FirstArrivalSurvival)
{
    const std::size_t reps = 10000;
    std::size_t none = 0;
    for (std::size_t r = 0; r < reps; ++r)
    {
        CounterRng rng(7, r);
        none += sample_arrivals(one_plus_s(), 1.0, 2.0, rng).count(1.0) == 0 ? 1 : 0;
    }
    const double p = std::exp(-1.0);
    EXPECT_LE(std::abs(static_cast<double>(none) / reps - p), 3.0 * std::sqrt(p * (1 - p) / reps));
}

TEST(SampleArrivals, EnvelopeBreachIsAnError)
{
    CounterRng rng(1, 0);
    EXPECT_THROW(sample_arrivals(LatpIntensity::constant(3.0), 10.0, 1.0, rng), EnvelopeBreach);
}

TEST(SurvivalSolve, ZeroIntensity)
{
    const auto tab = survival_solve(LatpIntensity::constant(0.0), TimeGrid(1.0, 50));
    for (std::size_t i = 0; i <= 50; ++i)
    {
        EXPECT_EQ(tab.density()[i], 0.0);
        for (std::size_t j = i; j <= 50; ++j) EXPECT_EQ(tab.at(i, j), 1.0);
    }
}

TEST(SurvivalSolve, ConstantRateClosedForm)
{
    const auto tab = survival_solve(LatpIntensity::constant(2.0), TimeGrid(1.0, 400));
    EXPECT_NEAR(tab.value(0.0, 0.5), std::exp(-1.0), 1e-5);
    for (double s : {0.0, 0.25, 0.6})
        for (double t : {0.6, 0.8, 1.0})
            if (s <= t)
            {
                EXPECT_NEAR(tab.value(s, t), std::exp(-2.0 * (t - s)), 1e-5);
            }
}

TEST(SurvivalSolve, MatchesSeriesForLastArrivalDependentRate)
{
    const double h = 1.0 / 400;
    const auto tab = survival_solve(one_plus_s(), TimeGrid(1.0, 400));
    const double series = survival_series(one_plus_s(), 0.5, 1.0, 20, h);
    EXPECT_NEAR(tab.value(0.5, 1.0), series, 1e-6 + 5 * h * h);
}

TEST(SurvivalSolve, TableInvariants)
{
    const auto tab = survival_solve(one_plus_s(), TimeGrid(1.0, 100));
    for (std::size_t i = 0; i <= 100; ++i)
        for (std::size_t j = i; j <= 100; ++j)
        {
            ASSERT_GE(tab.at(i, j), 0.0);
            ASSERT_LE(tab.at(i, j), 1.0);
            if (j > i)
            {
                ASSERT_LE(tab.at(i, j), tab.at(i, j - 1) + 1e-15);
            }
            if (i > 0)
            {
                ASSERT_GE(tab.at(i, j) + 1e-15, tab.at(i - 1, j));
            }
        }
}

TEST(SurvivalSeries, ZeroTermIsFirstArrivalSurvival)
{
    const double step = 1e-3;
    const auto w = one_plus_s();
    // omega(0,u) = 1, so both quadratures are exact
    EXPECT_NEAR(survival_series(w, 0.4, 0.9, 0, step), std::exp(-omega_integral(w, 0.0, 0.9, step)), 1e-15);
}

TEST(SurvivalSeries, PoissonTotalMass)
{
    for (double c : {0.5, 1.0, 2.0})
        EXPECT_NEAR(survival_series(LatpIntensity::constant(c), 0.7, 0.7, 30, 1e-3), 1.0, 1e-12) << c;
}

TEST(SurvivalSeries, ConstantRateClosedForm)
{
    EXPECT_NEAR(survival_series(LatpIntensity::constant(1.0), 0.5, 1.0, 20, 1e-3), std::exp(-0.5), 1e-8);
}

TEST(SurvivalSeries, TruncationBound)
{
    EXPECT_NEAR(series_truncation_bound(2.0, 1.0, 2), 8.0 / 6.0, 1e-15);
    const auto w = one_plus_s();
    const double full = survival_series(w, 0.8, 1.0, 25, 1.0 / 400);
    for (std::size_t k : {2u, 4u, 8u})
        EXPECT_LE(std::abs(survival_series(w, 0.8, 1.0, k, 1.0 / 400) - full), series_truncation_bound(2.0, 0.8, k) + 1e-12);
}

TEST(DerivativeBounds, ZeroIntensity)
{
    const auto w = LatpIntensity::constant(0.0);
    const auto rep = derivative_bound_check(survival_solve(w, TimeGrid(1.0, 50)), w);
    EXPECT_EQ(rep.max_t_violation, 0.0);
    EXPECT_EQ(rep.max_s_violation, 0.0);
    EXPECT_EQ(rep.max_neg_dt, 0.0);
    EXPECT_EQ(rep.max_ds, 0.0);
}

TEST(DerivativeBounds, ConstantAndLastArrivalRates)
{
    const double h = 1.0 / 200;
    for (const auto& w : {LatpIntensity::constant(2.0), one_plus_s()})
    {
        const auto rep = derivative_bound_check(survival_solve(w, TimeGrid(1.0, 200)), w);
        EXPECT_TRUE(rep.clean((1 + w.sup_norm()) * (1 + w.sup_norm()) * h));
    }
}
