#pragma once

// Flows on the initial/boundary set, the limit distribution functions
// phi_theta, and the fixed-point flow y_C with theta = 1 - phi_theta(W,.,.).

#include "candidate_stream.hpp"
#include "errors.hpp"
#include "intensity.hpp"
#include "latp.hpp"
#include "test_function.hpp"

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <sstream>
#include <string>
#include <vector>

namespace srp {

/// A point of Gamma: either an initial point (z, 0) or an upstream boundary
/// point (0, t0).
struct BoundaryPoint
{
    enum class Tag
    {
        initial,
        boundary,
    };

    Tag tag = Tag::initial;
    double coord = 0.0;

    static BoundaryPoint initial(double z) { return {Tag::initial, z}; }
    static BoundaryPoint boundary(double t0) { return {Tag::boundary, t0}; }

    double y0() const noexcept { return tag == Tag::initial ? coord : 0.0; }
    double t0() const noexcept { return tag == Tag::initial ? 0.0 : coord; }

    /// Monotone coordinate of the total order: (1,0) -> -1, (0,0) -> 0, (0,s) -> s.
    double order_key() const noexcept { return tag == Tag::initial ? -coord : coord; }

    bool admissible(double t) const noexcept { return t >= t0(); }
};

/// Later boundary times rank higher; every boundary point ranks at or above
/// (0,0), which ranks above every initial point (z,0) with z > 0; among
/// initial points the smaller z ranks higher.
inline std::weak_ordering gamma_compare(const BoundaryPoint& a, const BoundaryPoint& b)
{
    const double ka = a.order_key();
    const double kb = b.order_key();
    if (ka < kb) return std::weak_ordering::less;
    if (ka > kb) return std::weak_ordering::greater;
    return std::weak_ordering::equivalent;
}

namespace detail {

/// Interpolates tab(k, n), n >= k, at (t0, t) in (start, elapsed) coordinates
/// so the diagonal t = t0 is reproduced exactly.
inline double interp_elapsed(const TriTable& tab, double t0, double t, double dt)
{
    const auto m = tab.m;
    const double dm = static_cast<double>(m);
    const double gk = std::clamp(t0 / dt, 0.0, dm);
    const double ge = std::clamp((t - t0) / dt, 0.0, dm - gk);
    const auto k = std::min(static_cast<std::size_t>(gk), m);
    if (k == m) return tab(m, m);
    auto d = std::min(static_cast<std::size_t>(ge), m - k);
    const double a = gk - static_cast<double>(k);
    double b = ge - static_cast<double>(d);
    if (k + d >= m) return tab(k, m);
    const auto v = [&](std::size_t kk, std::size_t dd) { return tab(kk, kk + dd); };
    if (k + d + 1 == m)
    {
        b = std::min(b, 1.0 - a);
        return (1.0 - a - b) * v(k, d) + a * v(k + 1, d) + b * v(k, d + 1);
    }
    return (1 - a) * (1 - b) * v(k, d) + a * (1 - b) * v(k + 1, d) + (1 - a) * b * v(k, d + 1) +
           a * b * v(k + 1, d + 1);
}

} // namespace detail

/// theta on a grid: initial points z_j = j/m_z and boundary points t_k = k dt,
/// each tabulated at the time nodes t_n >= t0. Initialized to the identity
/// flow theta(gamma, t) = y0(gamma).
class FlowGrid
{
public:
    FlowGrid(std::size_t z_steps, std::size_t t_steps, double horizon)
        : z_steps_(z_steps), t_steps_(t_steps), horizon_(horizon), initial_((z_steps + 1) * (t_steps + 1)),
          boundary_(t_steps, 0.0)
    {
        if (z_steps == 0 || t_steps == 0 || !(horizon > 0.0)) throw std::invalid_argument("flow grid needs positive sizes");
        for (std::size_t j = 0; j <= z_steps_; ++j)
            for (std::size_t n = 0; n <= t_steps_; ++n) initial(j, n) = z_node(j);
    }

    static FlowGrid identity(std::size_t z_steps, std::size_t t_steps, double horizon)
    {
        return FlowGrid(z_steps, t_steps, horizon);
    }

    std::size_t z_steps() const noexcept { return z_steps_; }
    std::size_t t_steps() const noexcept { return t_steps_; }
    double horizon() const noexcept { return horizon_; }
    double dz() const noexcept { return 1.0 / static_cast<double>(z_steps_); }
    double dt() const noexcept { return horizon_ / static_cast<double>(t_steps_); }
    double z_node(std::size_t j) const noexcept
    {
        return j == z_steps_ ? 1.0 : static_cast<double>(j) / static_cast<double>(z_steps_);
    }
    double t_node(std::size_t n) const noexcept
    {
        return n == t_steps_ ? horizon_ : horizon_ * static_cast<double>(n) / static_cast<double>(t_steps_);
    }

    /// theta((z_j, 0), t_n)
    double& initial(std::size_t j, std::size_t n) noexcept { return initial_[j * (t_steps_ + 1) + n]; }
    double initial(std::size_t j, std::size_t n) const noexcept { return initial_[j * (t_steps_ + 1) + n]; }
    /// theta((0, t_k), t_n) for n >= k
    double& boundary(std::size_t k, std::size_t n) noexcept { return boundary_(k, n); }
    double boundary(std::size_t k, std::size_t n) const noexcept { return boundary_(k, n); }
    const detail::TriTable& boundary_table() const noexcept { return boundary_; }

    /// Interpolated value at an admissible (gamma, t).
    double operator()(const BoundaryPoint& g, double t) const
    {
        if (!g.admissible(t)) throw std::domain_error("flow queried at t < t0(gamma)");
        return at(g, t);
    }

    /// Unchecked evaluation; t < t0 returns y0 (the flow has not started).
    double at(const BoundaryPoint& g, double t) const noexcept
    {
        if (g.tag == BoundaryPoint::Tag::boundary)
        {
            if (t <= g.coord) return 0.0;
            return std::clamp(detail::interp_elapsed(boundary_, g.coord, t, dt()), 0.0, 1.0);
        }
        const double gz = std::clamp(g.coord, 0.0, 1.0) * static_cast<double>(z_steps_);
        const double gt = std::clamp(t / dt(), 0.0, static_cast<double>(t_steps_));
        const auto j = std::min(static_cast<std::size_t>(gz), z_steps_ - 1);
        const auto n = std::min(static_cast<std::size_t>(gt), t_steps_ - 1);
        const double a = gz - static_cast<double>(j);
        const double b = gt - static_cast<double>(n);
        // nested lerps keep constant rows exact
        const auto lerp = [](double x, double y, double u) { return x + u * (y - x); };
        return std::clamp(lerp(lerp(initial(j, n), initial(j + 1, n), a), lerp(initial(j, n + 1), initial(j + 1, n + 1), a), b),
                          0.0, 1.0);
    }

    struct InvariantReport
    {
        double start_error = 0.0;       // |theta(gamma, t0) - y0|
        double gamma_violation = 0.0;   // increase along the Gamma order
        double time_violation = 0.0;    // decrease in t
        double range_violation = 0.0;   // distance outside [0,1]
        double far_end_error = 0.0;     // |theta((1,0),t) - 1|

        bool ok(double tol) const
        {
            return start_error <= tol && gamma_violation <= tol && time_violation <= tol && range_violation <= tol &&
                   far_end_error <= tol;
        }
    };

    InvariantReport check_invariants() const
    {
        InvariantReport r;
        const auto range = [&](double v) { r.range_violation = std::max({r.range_violation, -v, v - 1.0}); };
        for (std::size_t j = 0; j <= z_steps_; ++j)
        {
            r.start_error = std::max(r.start_error, std::abs(initial(j, 0) - z_node(j)));
            for (std::size_t n = 0; n <= t_steps_; ++n)
            {
                range(initial(j, n));
                if (n > 0) r.time_violation = std::max(r.time_violation, initial(j, n - 1) - initial(j, n));
            }
        }
        for (std::size_t k = 0; k <= t_steps_; ++k)
        {
            r.start_error = std::max(r.start_error, std::abs(boundary(k, k)));
            for (std::size_t n = k; n <= t_steps_; ++n)
            {
                range(boundary(k, n));
                if (n > k) r.time_violation = std::max(r.time_violation, boundary(k, n - 1) - boundary(k, n));
            }
        }
        for (std::size_t n = 0; n <= t_steps_; ++n)
        {
            r.far_end_error = std::max(r.far_end_error, std::abs(initial(z_steps_, n) - 1.0));
            for (std::size_t j = z_steps_; j-- > 0;)
                r.gamma_violation = std::max(r.gamma_violation, initial(j, n) - initial(j + 1, n));
            r.gamma_violation = std::max(r.gamma_violation, std::abs(boundary(0, n) - initial(0, n)));
            for (std::size_t k = 1; k <= n; ++k)
                r.gamma_violation = std::max(r.gamma_violation, boundary(k, n) - boundary(k - 1, n));
        }
        return r;
    }

    /// Isotonic clamp onto the flow class: start values, range, monotone in t,
    /// non-increasing along the Gamma order. Returns the number of nodes moved.
    std::size_t project()
    {
        std::size_t moved = 0;
        const auto set = [&moved](double& slot, double v) {
            if (std::abs(slot - v) > 1e-15) ++moved;
            slot = v;
        };
        for (int pass = 0; pass < 8; ++pass)
        {
            const std::size_t before = moved;
            for (std::size_t j = 0; j <= z_steps_; ++j) set(initial(j, 0), z_node(j));
            for (std::size_t k = 0; k <= t_steps_; ++k) set(boundary(k, k), 0.0);
            for (std::size_t n = 0; n <= t_steps_; ++n)
            {
                set(initial(z_steps_, n), 1.0);
                double cap = 1.0;
                for (std::size_t j = z_steps_ + 1; j-- > 0;)
                {
                    double& v = initial(j, n);
                    if (v > cap || v < 0.0) set(v, std::clamp(v, 0.0, cap));
                    cap = v;
                }
                if (boundary(0, n) != initial(0, n)) set(boundary(0, n), initial(0, n));
                for (std::size_t k = 1; k <= n; ++k)
                {
                    double& v = boundary(k, n);
                    if (v > cap || v < 0.0) set(v, std::clamp(v, 0.0, cap));
                    cap = v;
                }
            }
            for (std::size_t j = 0; j <= z_steps_; ++j)
                for (std::size_t n = 1; n <= t_steps_; ++n)
                    if (initial(j, n) < initial(j, n - 1)) set(initial(j, n), initial(j, n - 1));
            for (std::size_t k = 0; k <= t_steps_; ++k)
                for (std::size_t n = k + 1; n <= t_steps_; ++n)
                    if (boundary(k, n) < boundary(k, n - 1)) set(boundary(k, n), boundary(k, n - 1));
            if (moved == before) break;
        }
        return moved;
    }

    /// Max node-wise difference to a flow on the same grid.
    double sup_difference(const FlowGrid& other) const
    {
        double d = 0.0;
        for (std::size_t i = 0; i < initial_.size(); ++i) d = std::max(d, std::abs(initial_[i] - other.initial_[i]));
        for (std::size_t k = 0; k <= t_steps_; ++k)
            for (std::size_t n = k; n <= t_steps_; ++n) d = std::max(d, std::abs(boundary(k, n) - other.boundary(k, n)));
        return d;
    }

    /// Rows: gamma tag, gamma coordinate, t, theta.
    void write_csv(std::ostream& os) const
    {
        os << "gamma_tag,gamma_coord,t,theta\n";
        os.precision(17);
        for (std::size_t j = 0; j <= z_steps_; ++j)
            for (std::size_t n = 0; n <= t_steps_; ++n)
                os << "initial," << z_node(j) << ',' << t_node(n) << ',' << initial(j, n) << '\n';
        for (std::size_t k = 0; k <= t_steps_; ++k)
            for (std::size_t n = k; n <= t_steps_; ++n)
                os << "boundary," << t_node(k) << ',' << t_node(n) << ',' << boundary(k, n) << '\n';
    }

    std::vector<double>& initial_values() noexcept { return initial_; }
    const std::vector<double>& initial_values() const noexcept { return initial_; }

private:
    std::size_t z_steps_;
    std::size_t t_steps_;
    double horizon_;
    std::vector<double> initial_;
    detail::TriTable boundary_;
};

/// omega(s,t) = w(theta((z,0),t),t) for s = 0, w(theta((0,s),t),t) for s > 0.
/// The s > 0 part does not depend on z.
inline LatpIntensity tilde_w(std::shared_ptr<const FlowGrid> theta, const IntensityField& w, double z)
{
    const double horizon = w.horizon();
    auto initial = [theta, w, z, horizon](double t) {
        const double tt = std::min(t, horizon);
        return w.eval(theta->at(BoundaryPoint::initial(z), tt), tt);
    };
    auto kernel = [theta, w, horizon](double s, double t) {
        const double tt = std::min(t, horizon);
        return w.eval(theta->at(BoundaryPoint::boundary(s), tt), tt);
    };
    return LatpIntensity(std::move(initial), std::move(kernel), w.sup_norm());
}

inline LatpIntensity tilde_w(const FlowGrid& theta, const IntensityField& w, double z)
{
    return tilde_w(std::make_shared<const FlowGrid>(theta), w, z);
}

namespace detail {

/// Weights so that int_{z_j}^{z_{j+1}} rho(z) g(z) dz = lo[j] g_j + hi[j] g_{j+1}
/// for g linear on the cell; exact for the piecewise-constant rho.
struct CellWeights
{
    std::vector<double> lo;
    std::vector<double> hi;
};

inline void accumulate_piece(const SpatialDensity& rho, double z_left, double dz, double l, double r, double& lo,
                             double& hi)
{
    // split [l, r] at histogram breakpoints
    const auto bins = rho.size();
    double a = l;
    while (a < r)
    {
        const auto b_idx = std::min(static_cast<std::size_t>(a * static_cast<double>(bins) + 1e-12), bins - 1);
        const double b_end = std::min(r, static_cast<double>(b_idx + 1) / static_cast<double>(bins));
        const double b = b_end > a ? b_end : r;
        const double dens = rho.bins()[b_idx];
        const double lambda_bar = (0.5 * (a + b) - z_left) / dz;
        lo += dens * (b - a) * (1.0 - lambda_bar);
        hi += dens * (b - a) * lambda_bar;
        a = b;
    }
}

inline CellWeights cell_weights(const SpatialDensity& rho, std::size_t z_steps)
{
    CellWeights w;
    w.lo.assign(z_steps, 0.0);
    w.hi.assign(z_steps, 0.0);
    const double dz = 1.0 / static_cast<double>(z_steps);
    for (std::size_t j = 0; j < z_steps; ++j)
    {
        const double l = static_cast<double>(j) * dz;
        const double r = j + 1 == z_steps ? 1.0 : static_cast<double>(j + 1) * dz;
        accumulate_piece(rho, l, dz, l, r, w.lo[j], w.hi[j]);
    }
    return w;
}

} // namespace detail

/// Survival data of the point processes tilde-nu_{theta,w,z} for every class,
/// and the distribution functions phi_theta(h, gamma, t) built from them.
class PhiEvaluator
{
public:
    struct ClassData
    {
        std::vector<double> initial_survival; // e^{-Omega_z(0,t_n)} at z_j: [j*(m+1)+n]
        std::vector<double> tail_mass;        // int_{z_j}^1 rho(z) e^{-Omega_z(0,t_n)} dz
        detail::TriTable boundary;            // int_0^1 rho(z) P(no arrival in (t_k, t_n]) dz
        std::vector<double> renewal_density;  // rho-averaged arrival density
    };

    PhiEvaluator(std::shared_ptr<const FlowGrid> theta, std::shared_ptr<const PopulationSpec> spec)
        : theta_(std::move(theta)), spec_(std::move(spec))
    {
        if (std::abs(theta_->horizon() - spec_->horizon()) > 1e-12 * spec_->horizon())
            throw std::invalid_argument("flow and population horizons differ");
        classes_.reserve(spec_->size());
        for (const auto& c : spec_->classes()) classes_.push_back(build(c));
    }

    const FlowGrid& theta() const noexcept { return *theta_; }
    std::shared_ptr<const FlowGrid> theta_ptr() const noexcept { return theta_; }
    const PopulationSpec& spec() const noexcept { return *spec_; }
    std::shared_ptr<const PopulationSpec> spec_ptr() const noexcept { return spec_; }
    std::uint64_t spec_hash() const noexcept { return spec_->hash(); }
    const ClassData& class_data(std::size_t k) const { return classes_.at(k); }

    /// phi_theta(class k, gamma, t) without the weight p_k h(w_k) and without
    /// interpolation: gamma and t on grid nodes.
    double node_initial(std::size_t k, std::size_t j, std::size_t n) const
    {
        return classes_[k].tail_mass[j * (theta_->t_steps() + 1) + n];
    }
    double node_boundary(std::size_t k, std::size_t i, std::size_t n) const { return classes_[k].boundary(i, n); }

    /// mu_0-weighted, h-weighted survivor mass sum_k p_k h_k int (...) at any
    /// admissible (gamma, t).
    double operator()(const std::vector<double>& h, const BoundaryPoint& g, double t) const
    {
        if (!g.admissible(t)) throw std::domain_error("phi_theta queried outside the admissible set");
        if (t > theta_->horizon() * (1 + 1e-12)) throw std::domain_error("phi_theta queried past the horizon");
        double acc = 0.0;
        for (std::size_t k = 0; k < classes_.size(); ++k)
            if (h[k] != 0.0) acc += (*spec_)[k].weight * h[k] * class_value(k, g, t);
        return acc;
    }

    double operator()(const TestFunction& h, const BoundaryPoint& g, double t) const
    {
        return (*this)(h.values(*spec_), g, t);
    }

    /// int over the survivors of class k (density-weighted, not p_k-weighted).
    double class_value(std::size_t k, const BoundaryPoint& g, double t) const
    {
        const auto& cd = classes_[k];
        const auto& th = *theta_;
        const double dt = th.dt();
        if (g.tag == BoundaryPoint::Tag::boundary) return detail::interp_elapsed(cd.boundary, g.coord, t, dt);

        const auto m = th.t_steps();
        const double gt = std::clamp(t / dt, 0.0, static_cast<double>(m));
        const auto n = std::min(static_cast<std::size_t>(gt), m - 1);
        const double b = gt - static_cast<double>(n);
        const auto at_time = [&](std::size_t nn) { return tail_from(k, g.coord, nn); };
        return (1 - b) * at_time(n) + b * at_time(n + 1);
    }

private:
    double tail_from(std::size_t k, double y0, std::size_t n) const
    {
        const auto& th = *theta_;
        const auto& cd = classes_[k];
        const auto mz = th.z_steps();
        const auto stride = th.t_steps() + 1;
        y0 = std::clamp(y0, 0.0, 1.0);
        const double gz = y0 * static_cast<double>(mz);
        const auto j = std::min(static_cast<std::size_t>(gz), mz - 1);
        if (gz == static_cast<double>(j)) return cd.tail_mass[j * stride + n];
        // partial cell [y0, z_{j+1}] plus the tail from z_{j+1}
        double lo = 0.0;
        double hi = 0.0;
        detail::accumulate_piece((*spec_)[k].density, th.z_node(j), th.dz(), y0, th.z_node(j + 1), lo, hi);
        return lo * cd.initial_survival[j * stride + n] + hi * cd.initial_survival[(j + 1) * stride + n] +
               cd.tail_mass[(j + 1) * stride + n];
    }

    ClassData build(const PopulationClass& c) const
    {
        const auto& th = *theta_;
        const auto mz = th.z_steps();
        const auto m = th.t_steps();
        const double h = th.dt();
        const auto stride = m + 1;
        ClassData cd;

        // first-arrival survival along each initial characteristic
        cd.initial_survival.assign((mz + 1) * stride, 1.0);
        std::vector<double> hazard_survival((mz + 1) * stride, 0.0); // omega_z(0,t) e^{-Omega_z(0,t)}
        for (std::size_t j = 0; j <= mz; ++j)
        {
            double integral = 0.0;
            double prev = c.field.eval(th.initial(j, 0), 0.0);
            hazard_survival[j * stride] = prev;
            for (std::size_t n = 1; n <= m; ++n)
            {
                const double cur = c.field.eval(th.initial(j, n), th.t_node(n));
                integral += 0.5 * h * (prev + cur);
                prev = cur;
                const double e = std::exp(-integral);
                cd.initial_survival[j * stride + n] = e;
                hazard_survival[j * stride + n] = cur * e;
            }
        }

        const auto weights = detail::cell_weights(c.density, mz);
        cd.tail_mass.assign((mz + 1) * stride, 0.0);
        std::vector<double> forcing(stride, 0.0);
        for (std::size_t n = 0; n <= m; ++n)
        {
            double tail = 0.0;
            double force = 0.0;
            for (std::size_t j = mz; j-- > 0;)
            {
                tail += weights.lo[j] * cd.initial_survival[j * stride + n] +
                        weights.hi[j] * cd.initial_survival[(j + 1) * stride + n];
                force += weights.lo[j] * hazard_survival[j * stride + n] +
                         weights.hi[j] * hazard_survival[(j + 1) * stride + n];
                cd.tail_mass[j * stride + n] = tail;
            }
            forcing[n] = force;
        }

        // renewal kernel: hazard after a jump to the top at t_k, shared by all z
        detail::TriTable rate(m);
        for (std::size_t k = 0; k <= m; ++k)
            for (std::size_t n = k; n <= m; ++n) rate(k, n) = c.field.eval(th.boundary(k, n), th.t_node(n));
        const auto decay = detail::decay_table(rate, h);
        cd.renewal_density = detail::renewal_density(rate, decay, forcing, h);
        std::vector<double> first(stride);
        for (std::size_t n = 0; n <= m; ++n) first[n] = cd.tail_mass[n];
        cd.boundary = detail::survival_from_density(first, cd.renewal_density, decay, h);
        return cd;
    }

    std::shared_ptr<const FlowGrid> theta_;
    std::shared_ptr<const PopulationSpec> spec_;
    std::vector<ClassData> classes_;
};

/// phi_theta(h, gamma, t) = sum_k p_k h(w_k) int_{[y0,1]} P(no arrival in (t0,t]) rho_k(z) dz.
inline double phi_theta(const FlowGrid& theta, std::shared_ptr<const PopulationSpec> spec, const TestFunction& h,
                        const BoundaryPoint& g, double t)
{
    const PhiEvaluator eval(std::make_shared<const FlowGrid>(theta), std::move(spec));
    return eval(h, g, t);
}

/// theta' = 1 - phi_theta(W, ., .) on every grid node.
inline FlowGrid fixed_point_map(const PhiEvaluator& phi)
{
    const auto& th = phi.theta();
    const auto& spec = phi.spec();
    FlowGrid out(th.z_steps(), th.t_steps(), th.horizon());
    for (std::size_t j = 0; j <= th.z_steps(); ++j)
        for (std::size_t n = 0; n <= th.t_steps(); ++n)
        {
            double mass = 0.0;
            for (std::size_t k = 0; k < spec.size(); ++k) mass += spec[k].weight * phi.node_initial(k, j, n);
            out.initial(j, n) = n == 0 ? th.z_node(j) : 1.0 - mass;
        }
    for (std::size_t i = 0; i <= th.t_steps(); ++i)
        for (std::size_t n = i; n <= th.t_steps(); ++n)
        {
            double mass = 0.0;
            for (std::size_t k = 0; k < spec.size(); ++k) mass += spec[k].weight * phi.node_boundary(k, i, n);
            out.boundary(i, n) = n == i ? 0.0 : 1.0 - mass;
        }
    return out;
}

struct SolverOptions
{
    std::size_t z_steps = 200;
    std::size_t t_steps = 200;
    double tol = 1e-8;
    std::size_t max_iter = 500;
    double damping = 1.0;
    bool auto_fallback = true; // switch to damping 0.5 when the residual grows
};

struct SolveLog
{
    std::vector<double> residuals;
    double final_damping = 1.0;
    std::size_t projected_nodes = 0;
    std::vector<std::string> notes;
};

/// The fixed-point flow y_C with its phi evaluator.
class LimitSolution
{
public:
    LimitSolution(std::shared_ptr<const FlowGrid> flow, std::shared_ptr<const PopulationSpec> spec, SolveLog log)
        : flow_(flow), phi_(flow, std::move(spec)), log_(std::move(log))
    {
    }

    const FlowGrid& y_c() const noexcept { return *flow_; }
    std::shared_ptr<const FlowGrid> y_c_ptr() const noexcept { return flow_; }
    const PhiEvaluator& phi() const noexcept { return phi_; }
    const PopulationSpec& spec() const noexcept { return phi_.spec(); }
    std::shared_ptr<const PopulationSpec> spec_ptr() const noexcept { return phi_.spec_ptr(); }
    const SolveLog& log() const noexcept { return log_; }
    std::uint64_t spec_hash() const noexcept { return phi_.spec_hash(); }

    /// sup over grid nodes of |theta - (1 - phi_theta(W))|.
    double residual() const { return fixed_point_map(phi_).sup_difference(*flow_); }

    void write_csv(std::ostream& os) const { flow_->write_csv(os); }

    /// Binary cache: magic, spec hash, grid sizes, horizon, flow values, residual history.
    void save(const std::string& path) const
    {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + path);
        const auto put = [&os](const auto& v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
        os.write(kMagic, 8);
        put(spec_hash());
        put(static_cast<std::uint64_t>(flow_->z_steps()));
        put(static_cast<std::uint64_t>(flow_->t_steps()));
        put(flow_->horizon());
        for (double v : flow_->initial_values()) put(v);
        for (std::size_t k = 0; k <= flow_->t_steps(); ++k)
            for (std::size_t n = k; n <= flow_->t_steps(); ++n) put(flow_->boundary(k, n));
        put(static_cast<std::uint64_t>(log_.residuals.size()));
        for (double r : log_.residuals) put(r);
    }

    static LimitSolution load(const std::string& path, std::shared_ptr<const PopulationSpec> spec)
    {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("cannot read " + path);
        const auto get = [&is](auto& v) {
            is.read(reinterpret_cast<char*>(&v), sizeof v);
            if (!is) throw std::runtime_error("truncated flow cache");
        };
        char magic[8];
        is.read(magic, 8);
        if (!is || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error(path + " is not a flow cache");
        std::uint64_t hash = 0, mz = 0, mt = 0;
        double horizon = 0.0;
        get(hash);
        if (hash != spec->hash()) throw std::runtime_error("flow cache " + path + " belongs to a different spec");
        get(mz);
        get(mt);
        get(horizon);
        auto flow = std::make_shared<FlowGrid>(mz, mt, horizon);
        for (double& v : flow->initial_values()) get(v);
        for (std::size_t k = 0; k <= mt; ++k)
            for (std::size_t n = k; n <= mt; ++n) get(flow->boundary(k, n));
        SolveLog log;
        std::uint64_t count = 0;
        get(count);
        log.residuals.resize(count);
        for (double& r : log.residuals) get(r);
        return LimitSolution(std::move(flow), std::move(spec), std::move(log));
    }

private:
    static constexpr char kMagic[8] = {'S', 'R', 'P', 'F', 'L', 'O', 'W', '1'};

    std::shared_ptr<const FlowGrid> flow_;
    PhiEvaluator phi_;
    SolveLog log_;
};

/// Picard iteration theta <- (1-a) theta + a (1 - phi_theta(W)) from the
/// identity flow until the sup-grid residual drops below tol.
inline LimitSolution solve_y_c(std::shared_ptr<const PopulationSpec> spec, const SolverOptions& opt = {})
{
    if (!(opt.damping > 0.0 && opt.damping <= 1.0)) throw std::invalid_argument("damping must lie in (0,1]");
    SolveLog log;
    double alpha = opt.damping;
    auto theta = std::make_shared<FlowGrid>(opt.z_steps, opt.t_steps, spec->horizon());
    std::size_t growth_streak = 0;
    for (std::size_t iter = 0; iter < opt.max_iter; ++iter)
    {
        const PhiEvaluator phi(theta, spec);
        FlowGrid next = fixed_point_map(phi);
        const double residual = next.sup_difference(*theta);
        log.residuals.push_back(residual);
        if (residual < opt.tol)
        {
            auto result = std::make_shared<FlowGrid>(*theta);
            log.projected_nodes = result->project();
            if (log.projected_nodes > 0)
                log.notes.push_back("isotonic projection moved " + std::to_string(log.projected_nodes) + " nodes");
            log.final_damping = alpha;
            return LimitSolution(std::move(result), std::move(spec), std::move(log));
        }
        if (iter > 0 && residual > log.residuals[iter - 1])
            ++growth_streak;
        else
            growth_streak = 0;
        if (opt.auto_fallback && alpha > 0.5 && growth_streak >= 2)
        {
            alpha = 0.5;
            log.notes.push_back("residual grew twice in a row at iteration " + std::to_string(iter) +
                                "; damping set to 0.5");
        }
        if (alpha < 1.0)
        {
            auto& cur = theta->initial_values();
            const auto& nxt = next.initial_values();
            for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = (1 - alpha) * cur[i] + alpha * nxt[i];
            for (std::size_t k = 0; k <= next.t_steps(); ++k)
                for (std::size_t n = k; n <= next.t_steps(); ++n)
                    theta->boundary(k, n) = (1 - alpha) * theta->boundary(k, n) + alpha * next.boundary(k, n);
        }
        else
        {
            *theta = std::move(next);
        }
    }
    std::ostringstream msg;
    msg << "fixed-point iteration did not reach tol " << opt.tol << " in " << opt.max_iter
        << " iterations (last residual " << log.residuals.back() << ")";
    throw NonConvergenceError(msg.str(), log.residuals);
}

struct OdeResidualReport
{
    double max_residual = 0.0;
    BoundaryPoint worst_gamma;
    double worst_t = 0.0;
};

/// Checks y_C(gamma,t) = y0 + int_{t0}^t int_{W x [y_C(gamma,s),1]} w(z,s) mu_s(dw dz) ds
/// on the grid. mu_s enters through phi_{y_C}: as gamma' runs up the Gamma
/// order the positions y_C(gamma',s) sweep [0,1] and phi_k(gamma',s) is the
/// class-k mass below them, so the inner integral is a Stieltjes sum.
inline OdeResidualReport verify_ode_form(const LimitSolution& sol)
{
    const auto& th = sol.y_c();
    const auto& phi = sol.phi();
    const auto& spec = sol.spec();
    const auto mz = th.z_steps();
    const auto m = th.t_steps();
    const double h = th.dt();

    // inner[gamma index][n]: gamma index runs along the Gamma order, 0 -> (1,0),
    // mz -> (0,0), mz + k -> (0,t_k) (k >= 1).
    const std::size_t gammas = mz + 1 + m;
    std::vector<double> inner(gammas * (m + 1), 0.0);
    for (std::size_t n = 0; n <= m; ++n)
    {
        const double s = th.t_node(n);
        const auto position = [&](std::size_t g) {
            return g <= mz ? th.initial(mz - g, n) : th.boundary(g - mz, n);
        };
        const auto mass = [&](std::size_t k, std::size_t g) {
            return g <= mz ? phi.node_initial(k, mz - g, n) : phi.node_boundary(k, g - mz, n);
        };
        const std::size_t last = mz + n;
        double acc = 0.0;
        inner[n] = 0.0;
        for (std::size_t g = 1; g <= last; ++g)
        {
            const double y_mid = std::clamp(0.5 * (position(g - 1) + position(g)), 0.0, 1.0);
            for (std::size_t k = 0; k < spec.size(); ++k)
                acc += spec[k].weight * spec[k].field.eval(y_mid, s) * (mass(k, g) - mass(k, g - 1));
            inner[g * (m + 1) + n] = acc;
        }
    }

    OdeResidualReport rep;
    const auto check = [&](std::size_t g, std::size_t n0, double y0, const BoundaryPoint& gp, auto value_at) {
        double integral = 0.0;
        for (std::size_t n = n0 + 1; n <= m; ++n)
        {
            integral += 0.5 * h * (inner[g * (m + 1) + n - 1] + inner[g * (m + 1) + n]);
            const double r = std::abs(value_at(n) - (y0 + integral));
            if (r > rep.max_residual)
            {
                rep.max_residual = r;
                rep.worst_gamma = gp;
                rep.worst_t = th.t_node(n);
            }
        }
    };
    for (std::size_t j = 0; j <= mz; ++j)
        check(mz - j, 0, th.z_node(j), BoundaryPoint::initial(th.z_node(j)),
              [&](std::size_t n) { return th.initial(j, n); });
    for (std::size_t k = 1; k <= m; ++k)
        check(mz + k, k, 0.0, BoundaryPoint::boundary(th.t_node(k)), [&](std::size_t n) { return th.boundary(k, n); });
    return rep;
}

/// Limit path of a tagged particle: jumps by thinning its own candidate stream
/// against w(Y(s-), s), and between jumps Y(t) = y_C(gamma(t), t) from the last
/// reset point.
class TaggedPath
{
public:
    TaggedPath(std::shared_ptr<const FlowGrid> flow, double y0, std::vector<double> jumps)
        : flow_(std::move(flow)), y0_(y0), jumps_(std::move(jumps))
    {
    }

    double y0() const noexcept { return y0_; }
    const std::vector<double>& jump_times() const noexcept { return jumps_; }

    BoundaryPoint reset_point(double t) const
    {
        const auto it = std::upper_bound(jumps_.begin(), jumps_.end(), t);
        if (it == jumps_.begin()) return BoundaryPoint::initial(y0_);
        return BoundaryPoint::boundary(*(it - 1));
    }

    double position(double t) const { return flow_->at(reset_point(t), t); }

    std::vector<double> sample(const std::vector<double>& times) const
    {
        std::vector<double> out;
        out.reserve(times.size());
        for (double t : times) out.push_back(position(t));
        return out;
    }

private:
    std::shared_ptr<const FlowGrid> flow_;
    double y0_;
    std::vector<double> jumps_;
};

/// `stream_id` must equal the particle index used in the finite system so the
/// two paths share candidates.
inline TaggedPath tagged_limit_path(const LimitSolution& sol, const IntensityField& w, double y0, std::uint64_t seed,
                                    std::uint64_t stream_id)
{
    CandidateStream stream(seed, stream_id, w.sup_norm());
    const auto flow = sol.y_c_ptr();
    const double horizon = flow->horizon();
    std::vector<double> jumps;
    BoundaryPoint gamma = BoundaryPoint::initial(y0);
    while (stream.time() <= horizon)
    {
        const double s = stream.time();
        const double rate = w.eval(flow->at(gamma, s), s);
        if (stream.mark() < rate)
        {
            jumps.push_back(s);
            gamma = BoundaryPoint::boundary(s);
        }
        stream.advance();
    }
    return TaggedPath(flow, y0, std::move(jumps));
}

} // namespace srp
