#pragma once

// Offline evaluation of empirical objects from an EventLog: characteristic
// curves Y^N_C, distribution functions phi^N, the empirical measure mu^N_t,
// and lattice sup-distances to a limit evaluator.

#include "flow.hpp"
#include "order_index.hpp"
#include "ranking_process.hpp"
#include "test_function.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace srp {

/// Smallest slot r with r/N >= y0, so #{r : r/N >= y0} = N - r = [N(1-y0)].
inline std::size_t downstream_start(std::size_t n, double y0)
{
    const double dn = static_cast<double>(n);
    if (y0 <= 0.0) return 0;
    if (y0 > 1.0) return n;
    auto r = static_cast<std::size_t>(std::min(std::ceil(y0 * dn), dn));
    while (r > 0 && static_cast<double>(r - 1) / dn >= y0) --r;
    while (r < n && static_cast<double>(r) / dn < y0) ++r;
    return r;
}

/// Per-particle sorted jump times of a log.
class LogIndex
{
public:
    explicit LogIndex(const EventLog& log) : log_(&log), n_(log.particles()), offsets_(n_ + 1, 0)
    {
        for (std::size_t e = 0; e < log.size(); ++e) ++offsets_[log.particle(e) + 1];
        for (std::size_t i = 0; i < n_; ++i) offsets_[i + 1] += offsets_[i];
        jumps_.resize(log.size());
        std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
        for (std::size_t e = 0; e < log.size(); ++e) jumps_[fill[log.particle(e)]++] = log.time(e);
        by_slot_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) by_slot_[log.assignment().slot[i]] = static_cast<std::uint32_t>(i);
    }

    const EventLog& log() const noexcept { return *log_; }
    std::size_t particles() const noexcept { return n_; }
    double horizon() const noexcept { return log_->horizon(); }
    std::uint32_t class_of(std::size_t i) const { return log_->assignment().class_of[i]; }
    std::uint32_t initial_slot(std::size_t i) const { return log_->assignment().slot[i]; }
    std::uint32_t particle_in_slot(std::size_t r) const { return by_slot_[r]; }

    const double* jumps_begin(std::size_t i) const { return jumps_.data() + offsets_[i]; }
    const double* jumps_end(std::size_t i) const { return jumps_.data() + offsets_[i + 1]; }
    std::size_t jump_count(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }

    /// First jump strictly after t0, +inf if none.
    double next_jump_after(std::size_t i, double t0) const
    {
        const double* it = std::upper_bound(jumps_begin(i), jumps_end(i), t0);
        return it == jumps_end(i) ? std::numeric_limits<double>::infinity() : *it;
    }

    /// Last jump at or before t, negative if none.
    double last_jump_by(std::size_t i, double t) const
    {
        const double* it = std::upper_bound(jumps_begin(i), jumps_end(i), t);
        return it == jumps_begin(i) ? -1.0 : *(it - 1);
    }

    bool jumped_in(std::size_t i, double t0, double t) const { return next_jump_after(i, t0) <= t; }

private:
    const EventLog* log_;
    std::size_t n_;
    std::vector<std::size_t> offsets_;
    std::vector<double> jumps_;
    std::vector<std::uint32_t> by_slot_;
};

/// Downstream particles of gamma with their first jump after t0, per class.
class GammaProfile
{
public:
    GammaProfile(const LogIndex& idx, const BoundaryPoint& g) : gamma_(g), n_(idx.particles())
    {
        const auto classes = idx.log().spec().size();
        first_.assign(classes, {});
        const bool initial = g.tag == BoundaryPoint::Tag::initial;
        const std::size_t start = initial ? downstream_start(n_, g.y0()) : 0;
        for (std::size_t r = start; r < n_; ++r)
        {
            const auto j = idx.particle_in_slot(r);
            first_[idx.class_of(j)].push_back(idx.next_jump_after(j, g.t0()));
        }
        for (auto& v : first_) std::sort(v.begin(), v.end());
        downstream_ = n_ - start;
    }

    const BoundaryPoint& gamma() const noexcept { return gamma_; }
    /// [N(1 - y0)]
    std::size_t downstream() const noexcept { return downstream_; }

    std::size_t jumped_by(double t) const
    {
        std::size_t c = 0;
        for (const auto& v : first_) c += static_cast<std::size_t>(std::upper_bound(v.begin(), v.end(), t) - v.begin());
        return c;
    }

    std::size_t survivors(std::size_t k, double t) const
    {
        const auto& v = first_[k];
        return static_cast<std::size_t>(v.end() - std::upper_bound(v.begin(), v.end(), t));
    }

    double survivor_weight(const std::vector<double>& h, double t) const
    {
        double acc = 0.0;
        for (std::size_t k = 0; k < first_.size(); ++k)
            if (h[k] != 0.0) acc += h[k] * static_cast<double>(survivors(k, t));
        return acc;
    }

private:
    BoundaryPoint gamma_;
    std::size_t n_;
    std::size_t downstream_ = 0;
    std::vector<std::vector<double>> first_;
};

namespace detail {

inline void check_query(const LogIndex& idx, const BoundaryPoint& g, double t)
{
    if (!g.admissible(t)) throw std::domain_error("(gamma, t) is not admissible: t < t0");
    if (t > idx.horizon() * (1 + 1e-12)) throw std::domain_error("query time past the log horizon");
}

} // namespace detail

/// Y^N_C(gamma,t) = y0 + (1/N) #{downstream j with a jump in (t0,t]}.
inline double char_curve(const LogIndex& idx, const BoundaryPoint& g, double t)
{
    detail::check_query(idx, g, t);
    const GammaProfile p(idx, g);
    return g.y0() + static_cast<double>(p.jumped_by(t)) / static_cast<double>(idx.particles());
}

/// phi^N(h,gamma,t) = (1/N) sum over downstream j with no jump in (t0,t] of h(w_j).
inline double phi_n(const LogIndex& idx, const TestFunction& h, const BoundaryPoint& g, double t)
{
    detail::check_query(idx, g, t);
    const GammaProfile p(idx, g);
    return p.survivor_weight(h.values(idx.log().spec()), t) / static_cast<double>(idx.particles());
}

/// Ranks of all particles after applying every event with time <= t.
inline std::vector<std::uint32_t> replay_ranks(const EventLog& log, double t)
{
    OrderIndex index(log.assignment().slot);
    for (std::size_t e = 0; e < log.size() && log.time(e) <= t; ++e) index.move_to_front(log.particle(e));
    return index.ranks();
}

/// Rank snapshots at each of the (ascending) times.
inline std::vector<std::vector<std::uint32_t>> replay_ranks(const EventLog& log, const std::vector<double>& times)
{
    if (!std::is_sorted(times.begin(), times.end())) throw std::invalid_argument("replay times must be ascending");
    std::vector<std::vector<std::uint32_t>> out;
    out.reserve(times.size());
    OrderIndex index(log.assignment().slot);
    std::size_t e = 0;
    for (double t : times)
    {
        for (; e < log.size() && log.time(e) <= t; ++e) index.move_to_front(log.particle(e));
        out.push_back(index.ranks());
    }
    return out;
}

/// Rank path of one particle: ranks[k] holds on [times[k], times[k+1]).
struct RankPath
{
    std::vector<double> times;
    std::vector<std::uint32_t> ranks;

    std::uint32_t at(double t) const
    {
        const auto it = std::upper_bound(times.begin(), times.end(), t);
        return ranks[static_cast<std::size_t>(it - times.begin()) - 1];
    }
};

/// Tracks one particle through the log in O(#events) using pre-jump ranks.
inline RankPath track_particle(const EventLog& log, std::uint32_t i)
{
    RankPath p;
    std::uint32_t r = log.assignment().slot.at(i);
    p.times.push_back(0.0);
    p.ranks.push_back(r);
    for (std::size_t e = 0; e < log.size(); ++e)
    {
        const auto j = log.particle(e);
        std::uint32_t next = r;
        if (j == i)
            next = 0;
        else if (log.pre_rank(e) > r)
            next = r + 1;
        if (next != r)
        {
            r = next;
            p.times.push_back(log.time(e));
            p.ranks.push_back(r);
        }
    }
    return p;
}

/// int h d mu^N_t over W x [y,1] = (1/N) sum_j h(w_j) 1{Y_j(t) >= y}.
inline double mu_query(const EventLog& log, const TestFunction& h, double y, double t)
{
    if (t < 0.0 || t > log.horizon() * (1 + 1e-12)) throw std::domain_error("mu query time outside [0,T]");
    const auto ranks = replay_ranks(log, t);
    const auto hv = h.values(log.spec());
    const double n = static_cast<double>(log.particles());
    double acc = 0.0;
    for (std::size_t j = 0; j < ranks.size(); ++j)
        if (static_cast<double>(ranks[j]) / n >= y) acc += hv[log.assignment().class_of[j]];
    return acc / n;
}

/// Characteristic curve from a general (y0, t0) with t0 > 0 and y0 > 0. This
/// lies outside the initial/boundary set, so the downstream set is random
/// and is read off a replay at t0.
inline double char_curve_interior(const EventLog& log, const LogIndex& idx, double y0, double t0, double t)
{
    if (t < t0) throw std::domain_error("interior characteristic queried before its start");
    const auto ranks = replay_ranks(log, t0);
    const double n = static_cast<double>(log.particles());
    std::size_t c = 0;
    for (std::size_t j = 0; j < ranks.size(); ++j)
        if (static_cast<double>(ranks[j]) / n >= y0 && idx.jumped_in(j, t0, t)) ++c;
    return y0 + static_cast<double>(c) / n;
}

/// gamma test points and t test points; only pairs with t >= t0(gamma) are used.
struct EvaluationLattice
{
    std::vector<BoundaryPoint> gammas; // ascending in the Gamma order
    std::vector<double> times;

    bool admissible(std::size_t g, std::size_t k) const { return gammas[g].admissible(times[k]); }

    std::size_t points() const
    {
        std::size_t c = 0;
        for (std::size_t g = 0; g < gammas.size(); ++g)
            for (std::size_t k = 0; k < times.size(); ++k) c += admissible(g, k) ? 1 : 0;
        return c;
    }

    /// Initial z in {1, ..., 1/(n_initial-1), 0}, boundary t0 = T/n_boundary ... T,
    /// times evenly spaced on [0,T]. The default is 11 + 10 = 21 gamma points
    /// by 21 time points.
    static EvaluationLattice standard(double horizon, std::size_t n_initial = 11, std::size_t n_boundary = 10,
                                      std::size_t n_times = 21)
    {
        if (n_initial < 2 || n_times < 2) throw std::invalid_argument("lattice needs at least 2 points per axis");
        EvaluationLattice l;
        for (std::size_t j = n_initial; j-- > 0;)
            l.gammas.push_back(BoundaryPoint::initial(j == n_initial - 1
                                                          ? 1.0
                                                          : static_cast<double>(j) / static_cast<double>(n_initial - 1)));
        for (std::size_t k = 1; k <= n_boundary; ++k)
            l.gammas.push_back(BoundaryPoint::boundary(
                k == n_boundary ? horizon : horizon * static_cast<double>(k) / static_cast<double>(n_boundary)));
        for (std::size_t k = 0; k < n_times; ++k)
            l.times.push_back(k + 1 == n_times ? horizon
                                               : horizon * static_cast<double>(k) / static_cast<double>(n_times - 1));
        return l;
    }
};

/// Value table over a lattice, NaN at inadmissible pairs.
struct LatticeValues
{
    const EvaluationLattice* lattice = nullptr;
    std::vector<double> values; // [g * times + k]

    double at(std::size_t g, std::size_t k) const { return values[g * lattice->times.size() + k]; }

    void write_csv(std::ostream& os) const
    {
        os << "gamma_tag,gamma_coord,t,value\n";
        os.precision(17);
        for (std::size_t g = 0; g < lattice->gammas.size(); ++g)
            for (std::size_t k = 0; k < lattice->times.size(); ++k)
            {
                if (!lattice->admissible(g, k)) continue;
                const auto& gp = lattice->gammas[g];
                os << (gp.tag == BoundaryPoint::Tag::initial ? "initial" : "boundary") << ',' << gp.coord << ','
                   << lattice->times[k] << ',' << at(g, k) << '\n';
            }
    }
};

template <class F>
LatticeValues evaluate_lattice(const EvaluationLattice& lattice, F&& f)
{
    LatticeValues out{&lattice, std::vector<double>(lattice.gammas.size() * lattice.times.size(),
                                                    std::numeric_limits<double>::quiet_NaN())};
    for (std::size_t g = 0; g < lattice.gammas.size(); ++g)
        for (std::size_t k = 0; k < lattice.times.size(); ++k)
            if (lattice.admissible(g, k)) out.values[g * lattice.times.size() + k] = f(g, k);
    return out;
}

/// phi^N(h, ., .) on the lattice.
inline LatticeValues phi_n_lattice(const LogIndex& idx, const TestFunction& h, const EvaluationLattice& lattice)
{
    const auto hv = h.values(idx.log().spec());
    const double n = static_cast<double>(idx.particles());
    std::vector<GammaProfile> profiles;
    for (const auto& g : lattice.gammas) profiles.emplace_back(idx, g);
    return evaluate_lattice(lattice, [&](std::size_t g, std::size_t k) {
        return profiles[g].survivor_weight(hv, lattice.times[k]) / n;
    });
}

/// Y^N_C on the lattice.
inline LatticeValues char_curve_lattice(const LogIndex& idx, const EvaluationLattice& lattice)
{
    const double n = static_cast<double>(idx.particles());
    std::vector<GammaProfile> profiles;
    for (const auto& g : lattice.gammas) profiles.emplace_back(idx, g);
    return evaluate_lattice(lattice, [&](std::size_t g, std::size_t k) {
        return lattice.gammas[g].y0() + static_cast<double>(profiles[g].jumped_by(lattice.times[k])) / n;
    });
}

struct SupDistance
{
    double value = 0.0;
    BoundaryPoint gamma;
    double t = 0.0;
    /// Largest jump of the reference between lattice neighbours; bounds how far
    /// the continuum sup can exceed the lattice sup (both sides are monotone).
    double adjacent_gap = 0.0;
    std::size_t points = 0;
};

/// max over lattice of |a - b|.
inline SupDistance sup_difference(const LatticeValues& a, const LatticeValues& ref)
{
    const auto& l = *a.lattice;
    SupDistance d;
    d.value = -1.0;
    for (std::size_t g = 0; g < l.gammas.size(); ++g)
        for (std::size_t k = 0; k < l.times.size(); ++k)
        {
            if (!l.admissible(g, k)) continue;
            ++d.points;
            const double diff = std::abs(a.at(g, k) - ref.at(g, k));
            if (diff > d.value)
            {
                d.value = diff;
                d.gamma = l.gammas[g];
                d.t = l.times[k];
            }
            if (k + 1 < l.times.size() && l.admissible(g, k + 1))
                d.adjacent_gap = std::max(d.adjacent_gap, std::abs(ref.at(g, k + 1) - ref.at(g, k)));
            if (g + 1 < l.gammas.size() && l.admissible(g + 1, k))
                d.adjacent_gap = std::max(d.adjacent_gap, std::abs(ref.at(g + 1, k) - ref.at(g, k)));
        }
    if (d.points == 0) d.value = 0.0;
    return d;
}

/// Limit phi(h, ., .) on the lattice.
inline LatticeValues phi_limit_lattice(const PhiEvaluator& phi, const TestFunction& h, const EvaluationLattice& lattice)
{
    const auto hv = h.values(phi.spec());
    return evaluate_lattice(lattice, [&](std::size_t g, std::size_t k) {
        return phi(hv, lattice.gammas[g], lattice.times[k]);
    });
}

inline void check_same_spec(const LogIndex& idx, const PhiEvaluator& phi)
{
    if (idx.log().spec_hash() != phi.spec_hash())
        throw std::invalid_argument("event log and limit solution come from different population specs");
    if (std::abs(idx.horizon() - phi.theta().horizon()) > 1e-12 * phi.theta().horizon() &&
        idx.horizon() > phi.theta().horizon())
        throw std::invalid_argument("event log horizon exceeds the limit solution horizon");
}

/// Lattice sup of |phi^N(h) - phi(h)| against the limit evaluator (phi_{y_C}
/// for original logs, phi_theta for flow-driven logs).
inline SupDistance sup_distance(const LogIndex& idx, const PhiEvaluator& phi, const TestFunction& h,
                                const EvaluationLattice& lattice)
{
    check_same_spec(idx, phi);
    return sup_difference(phi_n_lattice(idx, h, lattice), phi_limit_lattice(phi, h, lattice));
}

inline SupDistance sup_distance(const LogIndex& idx, const LimitSolution& sol, const TestFunction& h,
                                const EvaluationLattice& lattice)
{
    return sup_distance(idx, sol.phi(), h, lattice);
}

/// Lattice sup of |Y^N_C - theta|.
inline SupDistance curve_distance(const LogIndex& idx, const FlowGrid& theta, const EvaluationLattice& lattice)
{
    const auto ref = evaluate_lattice(lattice, [&](std::size_t g, std::size_t k) {
        return theta.at(lattice.gammas[g], lattice.times[k]);
    });
    return sup_difference(char_curve_lattice(idx, lattice), ref);
}

/// Lattice sup of |Y^N_C - (1 - phi_theta(W))|.
inline SupDistance curve_to_map_distance(const LogIndex& idx, const PhiEvaluator& phi, const EvaluationLattice& lattice)
{
    check_same_spec(idx, phi);
    const auto ones = std::vector<double>(phi.spec().size(), 1.0);
    const auto ref = evaluate_lattice(lattice, [&](std::size_t g, std::size_t k) {
        return 1.0 - phi(ones, lattice.gammas[g], lattice.times[k]);
    });
    return sup_difference(char_curve_lattice(idx, lattice), ref);
}

struct IdentityReport
{
    std::size_t phi_points = 0;
    std::size_t phi_violations = 0;
    std::size_t particle_checks = 0;
    std::size_t particle_violations = 0;
    std::string first_failure;

    bool ok() const noexcept { return phi_violations == 0 && particle_violations == 0; }
};

/// Exact integer forms of
///   Y^N_C(gamma,t) = y0 + [N(1-y0)]/N - phi^N(W,gamma,t)   on the lattice, and
///   Y_i(t) = Y^N_C(gamma_i(t), t)                            for all i at `times`,
/// where gamma_i(t) is the particle's last reset point. Zero tolerance.
inline IdentityReport check_identities(const EventLog& log, const EvaluationLattice& lattice,
                                       const std::vector<double>& times)
{
    IdentityReport rep;
    const LogIndex idx(log);
    const auto n = log.particles();
    const double dn = static_cast<double>(n);

    for (const auto& g : lattice.gammas)
    {
        const GammaProfile prof(idx, g);
        // [N(1-y0)] counted directly from the initial positions
        std::size_t floor_count = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (g.tag == BoundaryPoint::Tag::boundary || static_cast<double>(idx.initial_slot(j)) / dn >= g.y0())
                ++floor_count;
        for (double t : lattice.times)
        {
            if (!g.admissible(t)) continue;
            ++rep.phi_points;
            std::size_t survivors = 0;
            for (std::size_t j = 0; j < n; ++j)
            {
                const bool down =
                    g.tag == BoundaryPoint::Tag::boundary || static_cast<double>(idx.initial_slot(j)) / dn >= g.y0();
                if (down && !idx.jumped_in(j, g.t0(), t)) ++survivors;
            }
            if (prof.jumped_by(t) != floor_count - survivors)
            {
                if (rep.phi_violations++ == 0)
                    rep.first_failure = "phi identity at gamma=" + std::to_string(g.order_key()) + " t=" + std::to_string(t);
            }
        }
    }

    auto sorted_times = times;
    std::sort(sorted_times.begin(), sorted_times.end());
    const auto snapshots = replay_ranks(log, sorted_times);
    std::vector<double> last(n);
    std::vector<double> sorted_last;
    std::vector<std::size_t> jumped_below(n + 1);
    for (std::size_t s = 0; s < sorted_times.size(); ++s)
    {
        const double t = sorted_times[s];
        for (std::size_t j = 0; j < n; ++j) last[j] = idx.last_jump_by(j, t);
        sorted_last = last;
        std::sort(sorted_last.begin(), sorted_last.end());
        // jumped_below[r]: particles starting in slot >= r that jumped in (0,t]
        jumped_below[n] = 0;
        for (std::size_t r = n; r-- > 0;)
            jumped_below[r] = jumped_below[r + 1] + (last[idx.particle_in_slot(r)] >= 0.0 ? 1 : 0);
        for (std::size_t i = 0; i < n; ++i)
        {
            ++rep.particle_checks;
            std::size_t curve = 0;
            if (last[i] < 0.0)
                curve = idx.initial_slot(i) + jumped_below[downstream_start(n, static_cast<double>(idx.initial_slot(i)) / dn)];
            else
                curve = static_cast<std::size_t>(sorted_last.end() -
                                                 std::upper_bound(sorted_last.begin(), sorted_last.end(), last[i]));
            if (curve != snapshots[s][i] && rep.particle_violations++ == 0)
                rep.first_failure = "position identity for particle " + std::to_string(i) + " at t=" + std::to_string(t);
        }
    }
    return rep;
}

} // namespace srp
