#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace srp;

TEST(IntensityField, EvaluatesShippedKinds)
{
    EXPECT_EQ(IntensityField::constant(2.0, 1.0).eval(0.3, 0.5), 2.0);
    EXPECT_EQ(IntensityField::affine(1.0, 0.5, 0.0, 1.0).eval(1.0, 0.0), 1.5);
    const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9};
    const auto tab = IntensityField::tabulated(3, 3, v, 2.0);
    EXPECT_EQ(tab.eval(0.5, 1.0), 5.0);
    EXPECT_EQ(tab.eval(1.0, 0.0), 7.0);
    EXPECT_EQ(tab.eval(0.0, 2.0), 3.0);
    EXPECT_DOUBLE_EQ(tab.eval(0.25, 0.0), 2.5);
}

TEST(IntensityField, BoundsOfAnalyticKinds)
{
    const auto c = compute_bounds(IntensityField::constant(2.0, 1.0));
    EXPECT_EQ(c.sup_norm, 2.0);
    EXPECT_EQ(c.y_deriv_bound, 0.0);
    // y * t on T = 2 peaks at the corner (1, 2)
    const auto yt = compute_bounds(IntensityField::separable(0.0, 1.0, 0.0, 1.0, 2.0));
    EXPECT_DOUBLE_EQ(yt.sup_norm, 2.0);
    EXPECT_DOUBLE_EQ(yt.y_deriv_bound, 2.0);
}

TEST(IntensityField, TabulatedBoundsAreExhaustiveTableMaxima)
{
    const std::vector<double> v{0.5, 1.0, 3.0, 2.0, 0.0, 1.0};
    const auto tab = IntensityField::tabulated(3, 2, v, 1.0);
    EXPECT_DOUBLE_EQ(tab.sup_norm(), 3.0);
    // slopes along y: (3-0.5)/0.5, (2-1)/0.5, (0-3)/0.5, (1-2)/0.5
    EXPECT_DOUBLE_EQ(tab.y_deriv_bound(), 6.0);
}

TEST(IntensityField, RejectsNegativeValues)
{
    EXPECT_THROW(IntensityField::constant(-1.0, 1.0), std::invalid_argument);
    EXPECT_THROW(IntensityField::affine(0.5, -1.0, 0.0, 1.0), std::invalid_argument);
    EXPECT_THROW(IntensityField::tabulated(2, 2, {1, 1, 1}, 1.0), std::invalid_argument);
}

TEST(IntensityField, NonnegativeAndLipschitzOnFineGrid)
{
    const std::vector<IntensityField> fields{
        IntensityField::constant(1.5, 2.0), IntensityField::affine(0.5, 2.0, -0.2, 2.0),
        IntensityField::separable(1.0, -0.5, 2.0, 0.3, 2.0),
        IntensityField::tabulated(3, 3, {0, 1, 2, 2, 0.5, 1, 4, 3, 0}, 2.0)};
    const std::size_t n = 200;
    for (const auto& w : fields)
    {
        double worst_slope = 0.0;
        for (std::size_t i = 0; i <= n; ++i)
            for (std::size_t j = 0; j <= n; ++j)
            {
                const double y = static_cast<double>(i) / n;
                const double t = 2.0 * static_cast<double>(j) / n;
                const double v = w.eval(y, t);
                ASSERT_GE(v, 0.0) << to_string(w.kind());
                ASSERT_LE(v, w.sup_norm() * (1 + 1e-12)) << to_string(w.kind());
                if (i > 0) worst_slope = std::max(worst_slope, std::abs(v - w.eval(y - 1.0 / n, t)) * n);
            }
        EXPECT_LE(worst_slope, w.y_deriv_bound() * (1 + 1e-6)) << to_string(w.kind());
    }
}

TEST(SpatialDensity, CdfAndQuantileAreInverse)
{
    const SpatialDensity rho({1.5, 0.5});
    EXPECT_DOUBLE_EQ(rho.cdf(0.5), 0.75);
    EXPECT_DOUBLE_EQ(rho.total(), 1.0);
    for (double u : {0.0, 0.1, 0.5, 0.75, 0.9, 1.0}) EXPECT_NEAR(rho.cdf(rho.quantile(u)), u, 1e-12);
    EXPECT_THROW(SpatialDensity({1.0, -0.5}), std::invalid_argument);
}

TEST(Assignment, UniformStratifiedPositions)
{
    const auto a = assign_population(test::constant_spec(1.0), 4);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.position(i), 0.25 * static_cast<double>(i));
}

TEST(Assignment, TwoClassesExactProportions)
{
    const auto a = assign_population(test::two_constant(1.0, 2.0), 2);
    EXPECT_EQ(a.class_counts(), (std::vector<std::size_t>{1, 1}));
}

TEST(Assignment, StratifiedDiscrepancyAtMostOneOverN)
{
    // the total over all classes is exactly the slot count; per class the
    // greedy stratification stays within 2/N
    for (const auto& spec : {test::constant_spec(1.0), test::two_constant(1.0, 3.0), test::shipped("affine_two_class.yaml")})
        for (std::size_t n : {1u, 7u, 100u, 333u})
        {
            const auto a = assign_population(spec, n);
            for (std::size_t g = 0; g <= 1000; ++g)
            {
                const double y = static_cast<double>(g) / 1000.0;
                std::size_t total = 0;
                for (std::size_t k = 0; k < spec->size(); ++k)
                {
                    std::size_t count = 0;
                    for (std::size_t i = 0; i < n; ++i) count += a.class_of[i] == k && a.position(i) >= y ? 1 : 0;
                    total += count;
                    const double limit = (*spec)[k].weight * (1.0 - (*spec)[k].density.cdf(y));
                    ASSERT_LE(std::abs(static_cast<double>(count) / n - limit), 2.0 / n + 1e-12)
                        << "n=" << n << " y=" << y << " class " << k;
                }
                ASSERT_LE(std::abs(static_cast<double>(total) / n - (1.0 - y)), 1.0 / n + 1e-12);
            }
        }
}

TEST(Assignment, SeededRandomIsAPermutationAndReproducible)
{
    const auto spec = test::shipped("affine_two_class.yaml");
    const auto a = assign_population(spec, 500, AssignMode::seeded_random, 9);
    const auto b = assign_population(spec, 500, AssignMode::seeded_random, 9);
    const auto c = assign_population(spec, 500, AssignMode::seeded_random, 10);
    EXPECT_EQ(a.slot, b.slot);
    EXPECT_EQ(a.class_of, b.class_of);
    EXPECT_NE(a.class_of, c.class_of);
    auto sorted = a.slot;
    std::sort(sorted.begin(), sorted.end());
    for (std::uint32_t r = 0; r < 500; ++r) EXPECT_EQ(sorted[r], r);
}

TEST(PopulationSpec, AverageRate)
{
    EXPECT_EQ(m_w(*test::constant_spec(2.0)), 2.0);
    PopulationClass a{"a", 0.25, IntensityField::constant(4.0, 1.0), {}};
    PopulationClass b{"b", 0.75, IntensityField::constant(0.0, 1.0), {}};
    const auto spec = std::make_shared<const PopulationSpec>(1.0, std::vector<PopulationClass>{a, b});
    EXPECT_DOUBLE_EQ(spec->m_w(), 1.0);
    const auto assigned = assign_population(spec, 100);
    EXPECT_LE(std::abs(assigned.average_norm() - spec->m_w()), 4.0 / 100);
}

TEST(PopulationSpec, ValidationErrors)
{
    PopulationClass a{"a", 0.5, IntensityField::constant(1.0, 1.0), {}};
    PopulationClass b{"b", 0.4, IntensityField::constant(1.0, 1.0), {}};
    EXPECT_THROW(PopulationSpec(1.0, {a, b}), SpecError);
    EXPECT_THROW(PopulationSpec(1.0, {}), SpecError);
    EXPECT_THROW(PopulationSpec(0.0, {a}), SpecError);
    // every slot must be filled: the class densities have to mix to uniform
    PopulationClass top{"top", 1.0, IntensityField::constant(1.0, 1.0), SpatialDensity({2.0, 0.0})};
    EXPECT_THROW(PopulationSpec(1.0, {top}), SpecError);
}

TEST(PopulationSpec, HashSeparatesSpecs)
{
    EXPECT_EQ(test::constant_spec(1.0)->hash(), test::constant_spec(1.0)->hash());
    EXPECT_NE(test::constant_spec(1.0)->hash(), test::constant_spec(2.0)->hash());
    EXPECT_NE(test::constant_spec(1.0, 1.0)->hash(), test::constant_spec(1.0, 2.0)->hash());
}
