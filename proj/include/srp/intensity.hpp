#pragma once

#include "errors.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace srp {

enum class IntensityKind
{
    constant,
    affine,    // a + b*y + c*t
    separable, // (a + b*y) * (c + d*t)
    tabulated, // bilinear interpolation of a ny x nt table
};

inline const char* to_string(IntensityKind kind)
{
    switch (kind)
    {
    case IntensityKind::constant: return "constant";
    case IntensityKind::affine: return "affine";
    case IntensityKind::separable: return "separable";
    case IntensityKind::tabulated: return "tabulated";
    }
    return "?";
}

struct FieldBounds
{
    double sup_norm = 0.0;
    double y_deriv_bound = 0.0;
};

/// Jump-rate density w(y,t) on [0,1] x [0,T].
class IntensityField
{
public:
    static IntensityField constant(double rate, double horizon)
    {
        return IntensityField(IntensityKind::constant, {rate}, horizon);
    }

    static IntensityField affine(double base, double slope_y, double slope_t, double horizon)
    {
        return IntensityField(IntensityKind::affine, {base, slope_y, slope_t}, horizon);
    }

    static IntensityField separable(double a, double b, double c, double d, double horizon)
    {
        return IntensityField(IntensityKind::separable, {a, b, c, d}, horizon);
    }

    /// values[iy * nt + it] is w(iy/(ny-1), it*T/(nt-1)).
    static IntensityField tabulated(std::size_t ny, std::size_t nt, std::vector<double> values, double horizon)
    {
        if (ny < 2 || nt < 2) throw std::invalid_argument("tabulated intensity needs at least 2x2 nodes");
        if (values.size() != ny * nt)
            throw std::invalid_argument("tabulated intensity expects " + std::to_string(ny * nt) + " values, got " +
                                        std::to_string(values.size()));
        IntensityField f(IntensityKind::tabulated, std::move(values), horizon, ny, nt);
        return f;
    }

    IntensityKind kind() const noexcept { return kind_; }
    double horizon() const noexcept { return horizon_; }
    const std::vector<double>& params() const noexcept { return params_; }
    std::size_t table_ny() const noexcept { return ny_; }
    std::size_t table_nt() const noexcept { return nt_; }

    double sup_norm() const noexcept { return bounds_.sup_norm; }
    double y_deriv_bound() const noexcept { return bounds_.y_deriv_bound; }
    double min_value() const noexcept { return min_value_; }
    bool position_independent() const noexcept { return bounds_.y_deriv_bound == 0.0; }

    /// Domain-checked evaluation.
    double operator()(double y, double t) const
    {
        if (!(y >= 0.0 && y <= 1.0) || !(t >= 0.0 && t <= horizon_))
            throw std::domain_error("intensity evaluated outside [0,1]x[0,T]: (" + std::to_string(y) + ", " +
                                    std::to_string(t) + ")");
        return eval(y, t);
    }

    double eval(double y, double t) const noexcept
    {
        const auto& p = params_;
        switch (kind_)
        {
        case IntensityKind::constant: return p[0];
        case IntensityKind::affine: return p[0] + p[1] * y + p[2] * t;
        case IntensityKind::separable: return (p[0] + p[1] * y) * (p[2] + p[3] * t);
        case IntensityKind::tabulated: return eval_table(y, t);
        }
        return 0.0;
    }

private:
    IntensityField(IntensityKind kind, std::vector<double> params, double horizon, std::size_t ny = 0,
                   std::size_t nt = 0)
        : kind_(kind), params_(std::move(params)), horizon_(horizon), ny_(ny), nt_(nt)
    {
        if (!(horizon_ > 0.0) || !std::isfinite(horizon_)) throw std::invalid_argument("horizon must be positive");
        for (double v : params_)
            if (!std::isfinite(v)) throw std::invalid_argument("intensity parameters must be finite");
        compute_exact_bounds();
        if (min_value_ < 0.0)
            throw std::invalid_argument("intensity takes negative values (minimum " + std::to_string(min_value_) +
                                        ")");
    }

    double eval_table(double y, double t) const noexcept
    {
        const double gy = std::clamp(y, 0.0, 1.0) * static_cast<double>(ny_ - 1);
        const double gt = std::clamp(t / horizon_, 0.0, 1.0) * static_cast<double>(nt_ - 1);
        const std::size_t iy = std::min(static_cast<std::size_t>(gy), ny_ - 2);
        const std::size_t it = std::min(static_cast<std::size_t>(gt), nt_ - 2);
        const double a = gy - static_cast<double>(iy);
        const double b = gt - static_cast<double>(it);
        const auto v = [&](std::size_t i, std::size_t j) { return params_[i * nt_ + j]; };
        return (1 - a) * (1 - b) * v(iy, it) + a * (1 - b) * v(iy + 1, it) + (1 - a) * b * v(iy, it + 1) +
               a * b * v(iy + 1, it + 1);
    }

    // Every shipped kind is affine in y and in t separately, so extremes sit at
    // corners (analytic kinds) or at table nodes (tabulated).
    void compute_exact_bounds()
    {
        const auto& p = params_;
        switch (kind_)
        {
        case IntensityKind::constant:
            bounds_ = {std::abs(p[0]), 0.0};
            min_value_ = p[0];
            return;
        case IntensityKind::affine:
        case IntensityKind::separable: {
            double sup = 0.0;
            double lo = std::numeric_limits<double>::infinity();
            for (double y : {0.0, 1.0})
                for (double t : {0.0, horizon_})
                {
                    const double v = eval(y, t);
                    sup = std::max(sup, std::abs(v));
                    lo = std::min(lo, v);
                }
            double dy = std::abs(p[1]);
            if (kind_ == IntensityKind::separable) dy *= std::max(std::abs(p[2]), std::abs(p[2] + p[3] * horizon_));
            bounds_ = {sup, dy};
            min_value_ = lo;
            return;
        }
        case IntensityKind::tabulated: {
            double sup = 0.0;
            double lo = std::numeric_limits<double>::infinity();
            double dy = 0.0;
            for (std::size_t i = 0; i < ny_; ++i)
                for (std::size_t j = 0; j < nt_; ++j)
                {
                    const double v = p[i * nt_ + j];
                    sup = std::max(sup, std::abs(v));
                    lo = std::min(lo, v);
                    if (i + 1 < ny_)
                        dy = std::max(dy, std::abs(p[(i + 1) * nt_ + j] - v) * static_cast<double>(ny_ - 1));
                }
            bounds_ = {sup, dy};
            min_value_ = lo;
            return;
        }
        }
    }

    IntensityKind kind_;
    std::vector<double> params_;
    double horizon_;
    std::size_t ny_ = 0;
    std::size_t nt_ = 0;
    FieldBounds bounds_;
    double min_value_ = 0.0;
};

/// Brute-force scan on an n x n grid: max |w| and max central y-difference.
inline FieldBounds scan_bounds(const IntensityField& w, std::size_t n)
{
    FieldBounds out;
    const double hy = 1.0 / static_cast<double>(n - 1);
    for (std::size_t j = 0; j < n; ++j)
    {
        const double t = w.horizon() * static_cast<double>(j) / static_cast<double>(n - 1);
        for (std::size_t i = 0; i < n; ++i)
        {
            const double y = static_cast<double>(i) * hy;
            out.sup_norm = std::max(out.sup_norm, std::abs(w.eval(y, t)));
            const double ylo = i == 0 ? 0.0 : y - hy;
            const double yhi = i + 1 == n ? 1.0 : y + hy;
            out.y_deriv_bound = std::max(out.y_deriv_bound, std::abs(w.eval(yhi, t) - w.eval(ylo, t)) / (yhi - ylo));
        }
    }
    return out;
}

/// Exact bounds for every shipped kind. `refinement` (>= 2) only matters for
/// tabulated fields, whose table is rescanned on a grid refined by that factor
/// so the result never undercuts what interpolation can produce.
inline FieldBounds compute_bounds(const IntensityField& w, std::size_t refinement = 2)
{
    FieldBounds exact{w.sup_norm(), w.y_deriv_bound()};
    if (w.kind() != IntensityKind::tabulated) return exact;
    const std::size_t n = std::max(w.table_ny(), w.table_nt()) * std::max<std::size_t>(refinement, 2);
    const FieldBounds scanned = scan_bounds(w, n);
    return {std::max(exact.sup_norm, scanned.sup_norm), std::max(exact.y_deriv_bound, scanned.y_deriv_bound)};
}

/// Piecewise-constant density on [0,1] with equal-width bins.
class SpatialDensity
{
public:
    SpatialDensity() : bins_{1.0} {}
    explicit SpatialDensity(std::vector<double> bins) : bins_(std::move(bins))
    {
        if (bins_.empty()) throw std::invalid_argument("density needs at least one bin");
        for (double b : bins_)
            if (!(b >= 0.0) || !std::isfinite(b)) throw std::invalid_argument("density bins must be finite and nonnegative");
    }

    static SpatialDensity uniform() { return SpatialDensity(); }

    const std::vector<double>& bins() const noexcept { return bins_; }
    std::size_t size() const noexcept { return bins_.size(); }
    double bin_width() const noexcept { return 1.0 / static_cast<double>(bins_.size()); }

    double operator()(double z) const noexcept
    {
        const auto n = bins_.size();
        const auto i = std::min(static_cast<std::size_t>(std::max(z, 0.0) * static_cast<double>(n)), n - 1);
        return bins_[i];
    }

    /// Mass on [0, z].
    double cdf(double z) const noexcept
    {
        z = std::clamp(z, 0.0, 1.0);
        const double width = bin_width();
        double acc = 0.0;
        for (std::size_t i = 0; i < bins_.size(); ++i)
        {
            const double lo = static_cast<double>(i) * width;
            if (z <= lo) break;
            acc += bins_[i] * (std::min(z, lo + width) - lo);
        }
        return acc;
    }

    double mass(double a, double b) const noexcept { return cdf(b) - cdf(a); }
    double total() const noexcept { return cdf(1.0); }

    double quantile(double u) const noexcept
    {
        const double width = bin_width();
        double acc = 0.0;
        for (std::size_t i = 0; i < bins_.size(); ++i)
        {
            const double m = bins_[i] * width;
            if (m > 0.0 && acc + m >= u) return static_cast<double>(i) * width + (u - acc) / bins_[i];
            acc += m;
        }
        return 1.0;
    }

private:
    std::vector<double> bins_;
};

struct PopulationClass
{
    std::string name;
    double weight = 1.0;
    IntensityField field = IntensityField::constant(0.0, 1.0);
    SpatialDensity density;
};

/// Limit initial measure mu_0 on W x [0,1]: finitely many classes, each a
/// (weight, intensity, spatial histogram) triple.
class PopulationSpec
{
public:
    PopulationSpec(double horizon, std::vector<PopulationClass> classes)
        : horizon_(horizon), classes_(std::move(classes))
    {
        validate();
    }

    double horizon() const noexcept { return horizon_; }
    const std::vector<PopulationClass>& classes() const noexcept { return classes_; }
    std::size_t size() const noexcept { return classes_.size(); }
    const PopulationClass& operator[](std::size_t k) const { return classes_.at(k); }

    double c_w() const noexcept
    {
        double c = 0.0;
        for (const auto& k : classes_) c = std::max(c, k.field.y_deriv_bound());
        return c;
    }

    double m_w() const noexcept
    {
        double m = 0.0;
        for (const auto& k : classes_) m += k.weight * k.field.sup_norm();
        return m;
    }

    double max_norm() const noexcept
    {
        double m = 0.0;
        for (const auto& k : classes_) m = std::max(m, k.field.sup_norm());
        return m;
    }

    bool position_independent() const noexcept
    {
        return std::all_of(classes_.begin(), classes_.end(),
                           [](const auto& k) { return k.field.position_independent(); });
    }

    /// FNV-1a fingerprint of the numeric content.
    std::uint64_t hash() const noexcept
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        const auto feed = [&h](const void* data, std::size_t n) {
            const auto* bytes = static_cast<const unsigned char*>(data);
            for (std::size_t i = 0; i < n; ++i)
            {
                h ^= bytes[i];
                h *= 0x100000001b3ULL;
            }
        };
        const auto feed_d = [&](double v) { feed(&v, sizeof v); };
        const auto feed_n = [&](std::uint64_t v) { feed(&v, sizeof v); };
        feed_d(horizon_);
        feed_n(classes_.size());
        for (const auto& k : classes_)
        {
            feed_d(k.weight);
            feed_n(static_cast<std::uint64_t>(k.field.kind()));
            feed_n(k.field.table_ny());
            feed_n(k.field.table_nt());
            feed_n(k.field.params().size());
            for (double v : k.field.params()) feed_d(v);
            feed_n(k.density.size());
            for (double v : k.density.bins()) feed_d(v);
        }
        return h;
    }

private:
    void validate() const
    {
        if (!(horizon_ > 0.0)) throw SpecError("horizon", "must be positive");
        if (classes_.empty()) throw SpecError("classes", "at least one class is required");
        double total = 0.0;
        for (std::size_t k = 0; k < classes_.size(); ++k)
        {
            const auto path = "classes[" + std::to_string(k) + "]";
            const auto& c = classes_[k];
            if (!(c.weight > 0.0 && c.weight <= 1.0)) throw SpecError(path + ".weight", "must lie in (0,1]");
            if (std::abs(c.field.horizon() - horizon_) > 1e-12 * horizon_)
                throw SpecError(path + ".intensity", "horizon differs from the population horizon");
            for (std::size_t b = 0; b < c.density.size(); ++b)
                if (!(c.density.bins()[b] >= 0.0) || !std::isfinite(c.density.bins()[b]))
                    throw SpecError(path + ".density[" + std::to_string(b) + "]", "must be finite and non-negative");
            if (std::abs(c.density.total() - 1.0) > 1e-9)
                throw SpecError(path + ".density", "must integrate to 1 (got " + std::to_string(c.density.total()) + ")");
            total += c.weight;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw SpecError("classes", "weights must sum to 1 (got " + std::to_string(total) + ")");

        // Slots i/N are a permutation, so the position marginal of mu_0 is uniform.
        std::vector<double> cuts{0.0, 1.0};
        for (const auto& c : classes_)
            for (std::size_t b = 1; b < c.density.size(); ++b)
                cuts.push_back(static_cast<double>(b) / static_cast<double>(c.density.size()));
        std::sort(cuts.begin(), cuts.end());
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
        {
            if (cuts[i + 1] - cuts[i] < 1e-15) continue;
            const double mid = 0.5 * (cuts[i] + cuts[i + 1]);
            double mix = 0.0;
            for (const auto& c : classes_) mix += c.weight * c.density(mid);
            if (std::abs(mix - 1.0) > 1e-9)
                throw SpecError("classes", "weighted mixture of densities must be uniform on [0,1] (value " +
                                               std::to_string(mix) + " near z=" + std::to_string(mid) + ")");
        }
    }

    double horizon_;
    std::vector<PopulationClass> classes_;
};

enum class AssignMode
{
    stratified,
    seeded_random,
};

/// Deterministic N-particle discretization of mu_0. Particle i starts in slot
/// `slot[i]`, i.e. at position slot[i]/N.
struct PopulationAssignment
{
    std::shared_ptr<const PopulationSpec> spec;
    std::vector<std::uint32_t> class_of;
    std::vector<std::uint32_t> slot;

    std::size_t size() const noexcept { return slot.size(); }
    double position(std::size_t i) const noexcept
    {
        return static_cast<double>(slot[i]) / static_cast<double>(slot.size());
    }
    const IntensityField& field(std::size_t i) const { return (*spec)[class_of[i]].field; }

    double average_norm() const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < size(); ++i) s += field(i).sup_norm();
        return s / static_cast<double>(size());
    }

    std::vector<std::size_t> class_counts() const
    {
        std::vector<std::size_t> counts(spec->size(), 0);
        for (auto k : class_of) ++counts[k];
        return counts;
    }
};

/// Stratified mode walks the slots top-down and gives each slot to the class
/// whose cumulative target count N*int_0^{(r+1)/N} p_k rho_k is furthest ahead
/// of what it has received; particle i gets slot i. Seeded-random mode draws
/// (class, z) i.i.d. from mu_0 and ranks the z's into slots.
inline PopulationAssignment assign_population(std::shared_ptr<const PopulationSpec> spec, std::size_t n,
                                              AssignMode mode = AssignMode::stratified, std::uint64_t seed = 0)
{
    if (n == 0) throw std::invalid_argument("particle count must be at least 1");
    if (n > std::numeric_limits<std::uint32_t>::max()) throw std::invalid_argument("particle count too large");
    PopulationAssignment out;
    out.class_of.resize(n);
    out.slot.resize(n);
    const auto& classes = spec->classes();
    const double dn = static_cast<double>(n);

    if (mode == AssignMode::stratified)
    {
        std::vector<double> given(classes.size(), 0.0);
        for (std::size_t r = 0; r < n; ++r)
        {
            const double z = static_cast<double>(r + 1) / dn;
            std::size_t best = 0;
            double best_deficit = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < classes.size(); ++k)
            {
                const double deficit = dn * classes[k].weight * classes[k].density.cdf(z) - given[k];
                if (deficit > best_deficit + 1e-12)
                {
                    best = k;
                    best_deficit = deficit;
                }
            }
            given[best] += 1.0;
            out.class_of[r] = static_cast<std::uint32_t>(best);
            out.slot[r] = static_cast<std::uint32_t>(r);
        }
    }
    else
    {
        CounterRng rng(seed, 0x706f70756c617465ULL);
        std::vector<double> z(n);
        for (std::size_t i = 0; i < n; ++i)
        {
            const double u = rng.uniform();
            double acc = 0.0;
            std::size_t k = classes.size() - 1;
            for (std::size_t c = 0; c < classes.size(); ++c)
            {
                acc += classes[c].weight;
                if (u < acc)
                {
                    k = c;
                    break;
                }
            }
            out.class_of[i] = static_cast<std::uint32_t>(k);
            z[i] = classes[k].density.quantile(rng.uniform());
        }
        std::vector<std::uint32_t> order(n);
        std::iota(order.begin(), order.end(), 0u);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return z[a] < z[b]; });
        for (std::size_t r = 0; r < n; ++r) out.slot[order[r]] = static_cast<std::uint32_t>(r);
    }
    out.spec = std::move(spec);
    return out;
}

/// M_W = sum_k p_k ||w_k||.
inline double m_w(const PopulationSpec& spec) { return spec.m_w(); }

} // namespace srp
