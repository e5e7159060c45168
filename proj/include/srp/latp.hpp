#pragma once

// Point process whose hazard after its last arrival tau depends on (tau, t):
// sampling by thinning, survival probabilities P(N(t) = N(s)) by a renewal
// Volterra equation, and the explicit nested-simplex series as a cross-check.

#include "errors.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace srp {

/// omega(s,t) for 0 <= s <= t. The s = 0 row (no arrival yet) may differ from
/// the limit s -> 0+ of the renewal kernel; when no separate `initial` row is
/// given the two coincide.
class LatpIntensity
{
public:
    using Kernel = std::function<double(double, double)>;
    using Row = std::function<double(double)>;

    LatpIntensity(Kernel kernel, double sup_norm) : kernel_(std::move(kernel)), sup_norm_(sup_norm) {}
    LatpIntensity(Row initial, Kernel kernel, double sup_norm)
        : initial_(std::move(initial)), kernel_(std::move(kernel)), sup_norm_(sup_norm)
    {
    }

    static LatpIntensity constant(double c)
    {
        return LatpIntensity([c](double, double) { return c; }, std::abs(c));
    }

    double operator()(double s, double t) const { return s == 0.0 ? initial(t) : kernel_(s, t); }
    double initial(double t) const { return initial_ ? initial_(t) : kernel_(0.0, t); }
    /// Hazard after an arrival at s; continuous as s -> 0+.
    double kernel(double s, double t) const { return kernel_(s, t); }
    double sup_norm() const noexcept { return sup_norm_; }

private:
    Row initial_;
    Kernel kernel_;
    double sup_norm_;
};

struct ArrivalSequence
{
    std::vector<double> times;

    std::size_t count(double t) const
    {
        return static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
    }
    bool no_arrival_in(double s, double t) const { return count(t) == count(s); }
    double last_arrival(double t) const
    {
        const auto k = count(t);
        return k == 0 ? 0.0 : times[k - 1];
    }
};

/// Uniform grid 0 = t_0 < ... < t_m = T.
class TimeGrid
{
public:
    TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps)
    {
        if (!(horizon > 0.0) || steps == 0) throw std::invalid_argument("time grid needs T > 0 and at least one step");
    }

    static TimeGrid from_nodes(const std::vector<double>& nodes)
    {
        if (nodes.size() < 2 || nodes.front() != 0.0) throw std::invalid_argument("grid must start at 0");
        const double h = (nodes.back() - nodes.front()) / static_cast<double>(nodes.size() - 1);
        for (std::size_t i = 1; i < nodes.size(); ++i)
            if (std::abs((nodes[i] - nodes[i - 1]) - h) > 1e-9 * h)
                throw std::invalid_argument("survival solver requires a uniform grid (step " + std::to_string(i) +
                                            " differs)");
        return TimeGrid(nodes.back(), nodes.size() - 1);
    }

    double horizon() const noexcept { return horizon_; }
    std::size_t steps() const noexcept { return steps_; }
    double step() const noexcept { return horizon_ / static_cast<double>(steps_); }
    double node(std::size_t i) const noexcept
    {
        return i == steps_ ? horizon_ : horizon_ * static_cast<double>(i) / static_cast<double>(steps_);
    }

private:
    double horizon_;
    std::size_t steps_;
};

/// Omega(t0,t) = int_{t0}^t omega(t0,u) du by composite trapezoid with step
/// at most `step`. Not additive in general: the first slot stays at t0.
inline double omega_integral(const LatpIntensity& omega, double t0, double t, double step)
{
    if (t0 > t) throw std::domain_error("omega_integral requires t0 <= t");
    if (t0 == t) return 0.0;
    const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil((t - t0) / step - 1e-9)));
    const double h = (t - t0) / static_cast<double>(n);
    double acc = 0.5 * (omega(t0, t0) + omega(t0, t));
    for (std::size_t i = 1; i < n; ++i) acc += omega(t0, t0 + h * static_cast<double>(i));
    return acc * h;
}

/// Thinning of a unit Poisson random measure restricted to marks in
/// [0, envelope): a candidate at u with mark xi is an arrival iff
/// xi < omega(tau*(u-), u).
inline ArrivalSequence sample_arrivals(const LatpIntensity& omega, double horizon, double envelope, CounterRng& rng)
{
    ArrivalSequence out;
    if (envelope <= 0.0) return out;
    double u = 0.0;
    double last = 0.0;
    for (;;)
    {
        u += rng.exponential(envelope);
        if (u > horizon) break;
        const double mark = rng.uniform() * envelope;
        const double rate = omega(last, u);
        if (rate > envelope * (1.0 + 1e-12))
            throw EnvelopeBreach("hazard " + std::to_string(rate) + " exceeds envelope " + std::to_string(envelope));
        if (mark < rate)
        {
            out.times.push_back(u);
            last = u;
        }
    }
    return out;
}

/// Default envelope: strict dominance with a 5% margin.
inline double default_envelope(const LatpIntensity& omega) { return 1.05 * omega.sup_norm(); }

namespace detail {

/// Square (m+1)x(m+1) table, only j >= i is meaningful.
struct TriTable
{
    std::size_t m = 0;
    std::vector<double> data;

    TriTable() = default;
    explicit TriTable(std::size_t steps, double fill = 0.0) : m(steps), data((steps + 1) * (steps + 1), fill) {}
    double& operator()(std::size_t i, std::size_t j) noexcept { return data[i * (m + 1) + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data[i * (m + 1) + j]; }
};

/// decay(i,j) = exp(-int_{t_i}^{t_j} rate(i,u) du) by cumulative trapezoid
/// along j, given rate(i,j) on the grid.
inline TriTable decay_table(const TriTable& rate, double h)
{
    TriTable out(rate.m);
    for (std::size_t i = 0; i <= rate.m; ++i)
    {
        double integral = 0.0;
        out(i, i) = 1.0;
        for (std::size_t j = i + 1; j <= rate.m; ++j)
        {
            integral += 0.5 * h * (rate(i, j - 1) + rate(i, j));
            out(i, j) = std::exp(-integral);
        }
    }
    return out;
}

/// Trapezoid forward substitution for the renewal density
///   f(u) = forcing(u) + int_0^u f(v) rate(v,u) decay(v,u) dv.
inline std::vector<double> renewal_density(const TriTable& rate, const TriTable& decay,
                                           const std::vector<double>& forcing, double h)
{
    const std::size_t m = rate.m;
    std::vector<double> f(m + 1, 0.0);
    f[0] = forcing[0];
    for (std::size_t j = 1; j <= m; ++j)
    {
        double acc = 0.5 * f[0] * rate(0, j) * decay(0, j);
        for (std::size_t i = 1; i < j; ++i) acc += f[i] * rate(i, j) * decay(i, j);
        const double diag = rate(j, j);
        f[j] = (forcing[j] + h * acc) / (1.0 - 0.5 * h * diag);
    }
    return f;
}

/// p(i,j) = first_survival(j) + int_0^{t_i} f(u) decay(u, t_j) du, clamped to [0,1].
inline TriTable survival_from_density(const std::vector<double>& first_survival, const std::vector<double>& density,
                                      const TriTable& decay, double h)
{
    const std::size_t m = decay.m;
    TriTable p(m, 1.0);
    for (std::size_t j = 0; j <= m; ++j)
    {
        double acc = first_survival[j];
        p(0, j) = std::clamp(acc, 0.0, 1.0);
        for (std::size_t i = 1; i <= j; ++i)
        {
            acc += 0.5 * h * (density[i - 1] * decay(i - 1, j) + density[i] * decay(i, j));
            p(i, j) = std::clamp(acc, 0.0, 1.0);
        }
        p(j, j) = 1.0;
    }
    return p;
}

} // namespace detail

/// p(i,j) ~ P(N(t_j) = N(t_i)) for i <= j, plus the arrival-rate density f.
class SurvivalTable
{
public:
    SurvivalTable(TimeGrid grid, detail::TriTable p, std::vector<double> density)
        : grid_(grid), p_(std::move(p)), density_(std::move(density))
    {
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t steps() const noexcept { return grid_.steps(); }
    double at(std::size_t i, std::size_t j) const noexcept { return j <= i ? 1.0 : p_(i, j); }
    const std::vector<double>& density() const noexcept { return density_; }

    /// Bilinear interpolation in (s, t), using p = 1 for t <= s.
    double value(double s, double t) const
    {
        if (s > t) throw std::domain_error("survival probability needs s <= t");
        const double h = grid_.step();
        const auto m = grid_.steps();
        const double gs = std::clamp(s / h, 0.0, static_cast<double>(m));
        const double gt = std::clamp(t / h, 0.0, static_cast<double>(m));
        const auto i = std::min(static_cast<std::size_t>(gs), m - 1);
        const auto j = std::min(static_cast<std::size_t>(gt), m - 1);
        const double a = gs - static_cast<double>(i);
        const double b = gt - static_cast<double>(j);
        return (1 - a) * (1 - b) * at(i, j) + a * (1 - b) * at(i + 1, j) + (1 - a) * b * at(i, j + 1) +
               a * b * at(i + 1, j + 1);
    }

    void write_csv(std::ostream& os) const
    {
        os << "s,t,p\n";
        os.precision(17);
        for (std::size_t i = 0; i <= steps(); ++i)
            for (std::size_t j = i; j <= steps(); ++j) os << grid_.node(i) << ',' << grid_.node(j) << ',' << at(i, j) << '\n';
    }

private:
    TimeGrid grid_;
    detail::TriTable p_;
    std::vector<double> density_;
};

/// Survival table by the renewal route: solve
///   f(u) = omega(0,u) e^{-Omega(0,u)} + int_0^u f(v) omega(v,u) e^{-Omega(v,u)} dv
/// then p(s,t) = e^{-Omega(0,t)} + int_0^s f(u) e^{-Omega(u,t)} du.
inline SurvivalTable survival_solve(const LatpIntensity& omega, const TimeGrid& grid)
{
    const auto m = grid.steps();
    const double h = grid.step();
    detail::TriTable rate(m);
    for (std::size_t i = 0; i <= m; ++i)
        for (std::size_t j = i; j <= m; ++j) rate(i, j) = omega.kernel(grid.node(i), grid.node(j));
    const auto decay = detail::decay_table(rate, h);

    std::vector<double> first_survival(m + 1, 1.0);
    std::vector<double> forcing(m + 1, 0.0);
    double integral = 0.0;
    double prev = omega.initial(0.0);
    forcing[0] = prev;
    for (std::size_t j = 1; j <= m; ++j)
    {
        const double cur = omega.initial(grid.node(j));
        integral += 0.5 * h * (prev + cur);
        prev = cur;
        first_survival[j] = std::exp(-integral);
        forcing[j] = cur * first_survival[j];
    }
    auto density = detail::renewal_density(rate, decay, forcing, h);
    auto p = detail::survival_from_density(first_survival, density, decay, h);
    return SurvivalTable(grid, std::move(p), std::move(density));
}

/// Overload rejecting non-uniform grids.
inline SurvivalTable survival_solve(const LatpIntensity& omega, const std::vector<double>& nodes)
{
    return survival_solve(omega, TimeGrid::from_nodes(nodes));
}

namespace detail {

/// Partial sum over k <= kmax of the explicit series for P(N(t) = N(s)):
/// the k-th term integrates over the last k arrivals 0 < u_{k-1} < ... < u_0 <= s.
/// Term k+1 is built from the density g_k of the k-th arrival time, so each
/// term reuses the previous inner integral. Trapezoid throughout.
inline double series_trapezoid(const LatpIntensity& omega, double s, double t, std::size_t kmax, double step)
{
    const auto tail = [&](double from, double row_s, bool initial_row) {
        if (t == from) return 0.0;
        const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil((t - from) / step - 1e-9)));
        const double h = (t - from) / static_cast<double>(n);
        const auto f = [&](double u) { return initial_row ? omega.initial(u) : omega.kernel(row_s, u); };
        double acc = 0.5 * (f(from) + f(t));
        for (std::size_t i = 1; i < n; ++i) acc += f(from + h * static_cast<double>(i));
        return acc * h;
    };

    if (s == 0.0 || kmax == 0)
    {
        // Omega(0,t) on [0,s] then [s,t], matching the k >= 1 quadrature layout.
        double head = 0.0;
        if (s > 0.0)
        {
            const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(s / step - 1e-9)));
            const double h = s / static_cast<double>(n);
            head = 0.5 * (omega.initial(0.0) + omega.initial(s));
            for (std::size_t i = 1; i < n; ++i) head += omega.initial(h * static_cast<double>(i));
            head *= h;
        }
        return std::exp(-(head + tail(s, 0.0, true)));
    }

    const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(s / step - 1e-9)));
    const double h = s / static_cast<double>(n);
    std::vector<double> u(n + 1);
    for (std::size_t l = 0; l <= n; ++l) u[l] = l == n ? s : h * static_cast<double>(l);

    // kernel decay e^{-Omega(u_v, u_l)} and hazard omega(u_v, u_l) on the s-grid
    detail::TriTable rate(n);
    for (std::size_t v = 0; v <= n; ++v)
        for (std::size_t l = v; l <= n; ++l) rate(v, l) = omega.kernel(u[v], u[l]);
    const auto decay = detail::decay_table(rate, h);

    std::vector<double> first_row(n + 1);
    for (std::size_t l = 0; l <= n; ++l) first_row[l] = omega.initial(u[l]);
    std::vector<double> g(n + 1, 0.0);
    double init_integral = 0.0;
    g[0] = first_row[0];
    for (std::size_t l = 1; l <= n; ++l)
    {
        init_integral += 0.5 * h * (first_row[l - 1] + first_row[l]);
        g[l] = first_row[l] * std::exp(-init_integral);
    }
    const double zero_term = std::exp(-(init_integral + tail(s, 0.0, true)));

    // exp(-Omega(u_l, t)) for the no-further-arrival factor
    std::vector<double> end_decay(n + 1);
    for (std::size_t l = 0; l <= n; ++l)
    {
        double integral = 0.0;
        for (std::size_t r = l + 1; r <= n; ++r) integral += 0.5 * h * (rate(l, r - 1) + rate(l, r));
        end_decay[l] = std::exp(-(integral + tail(s, u[l], false)));
    }

    double total = zero_term;
    std::vector<double> next(n + 1);
    for (std::size_t k = 1; k <= kmax; ++k)
    {
        double term = 0.5 * (g[0] * end_decay[0] + g[n] * end_decay[n]);
        for (std::size_t l = 1; l < n; ++l) term += g[l] * end_decay[l];
        total += term * h;
        if (k == kmax) break;
        next[0] = 0.0;
        for (std::size_t l = 1; l <= n; ++l)
        {
            double acc = 0.5 * (g[0] * rate(0, l) * decay(0, l) + g[l] * rate(l, l));
            for (std::size_t v = 1; v < l; ++v) acc += g[v] * rate(v, l) * decay(v, l);
            next[l] = acc * h;
        }
        std::swap(g, next);
    }
    return total;
}

} // namespace detail

/// Series value at quadrature step `step`, with one Richardson step against
/// step/2 to cancel the h^2 trapezoid error.
inline double survival_series(const LatpIntensity& omega, double s, double t, std::size_t kmax, double step)
{
    if (s > t) throw std::domain_error("survival_series requires s <= t");
    if (!(step > 0.0)) throw std::invalid_argument("quadrature step must be positive");
    const double coarse = detail::series_trapezoid(omega, s, t, kmax, step);
    const double fine = detail::series_trapezoid(omega, s, t, kmax, 0.5 * step);
    return (4.0 * fine - coarse) / 3.0;
}

/// Truncation bound (||omega|| s)^{kmax+1} / (kmax+1)!.
inline double series_truncation_bound(double sup_norm, double s, std::size_t kmax)
{
    double term = 1.0;
    for (std::size_t k = 1; k <= kmax + 1; ++k) term *= sup_norm * s / static_cast<double>(k);
    return term;
}

struct DerivativeReport
{
    double max_t_violation = 0.0; // how far -dp/dt leaves [0, ||omega||]
    double max_s_violation = 0.0; // how far dp/ds leaves [0, ||omega|| p]
    double max_neg_dt = 0.0;      // max of -dp/dt seen
    double max_ds = 0.0;          // max of dp/ds seen

    bool clean(double tolerance) const { return max_t_violation <= tolerance && max_s_violation <= tolerance; }
};

/// Forward differences against 0 <= -dp/dt <= ||omega|| and
/// 0 <= dp/ds <= ||omega|| p. Violations are O(h) for a converged table.
inline DerivativeReport derivative_bound_check(const SurvivalTable& table, const LatpIntensity& omega)
{
    DerivativeReport r;
    const auto m = table.steps();
    const double h = table.grid().step();
    const double norm = omega.sup_norm();
    for (std::size_t i = 0; i <= m; ++i)
        for (std::size_t j = i; j < m; ++j)
        {
            const double neg_dt = (table.at(i, j) - table.at(i, j + 1)) / h;
            r.max_neg_dt = std::max(r.max_neg_dt, neg_dt);
            r.max_t_violation = std::max({r.max_t_violation, -neg_dt, neg_dt - norm});
            const double ds = (table.at(i + 1, j + 1) - table.at(i, j + 1)) / h;
            r.max_ds = std::max(r.max_ds, ds);
            r.max_s_violation = std::max({r.max_s_violation, -ds, ds - norm * table.at(i, j + 1)});
        }
    return r;
}

} // namespace srp
