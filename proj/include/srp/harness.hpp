#pragma once

// Experiment orchestration: N-sweeps of lattice sup-distances with log-log
// slope fits, flow-driven sweeps, decoupling fractions, tagged particles,
// and point-process cross-validation.

#include "flow.hpp"
#include "latp.hpp"
#include "measure.hpp"
#include "ranking_process.hpp"
#include "test_function.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <memory>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace srp {

using Json = nlohmann::ordered_json;

/// Runs f(0..count-1) on up to `workers` threads; results are stored by index,
/// so the output never depends on scheduling.
template <class R, class F>
std::vector<R> parallel_map(std::size_t count, std::size_t workers, F&& f)
{
    std::vector<R> out(count);
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1)
    {
        for (std::size_t i = 0; i < count; ++i) out[i] = f(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++)
            {
                try
                {
                    out[i] = f(i);
                }
                catch (...)
                {
                    const std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
    return out;
}

struct MeanSe
{
    double mean = 0.0;
    double se = 0.0;
    std::size_t count = 0;
};

inline MeanSe mean_se(const std::vector<double>& v)
{
    MeanSe m;
    m.count = v.size();
    if (v.empty()) return m;
    double s = 0.0;
    for (double x : v) s += x;
    m.mean = s / static_cast<double>(v.size());
    if (v.size() > 1)
    {
        double q = 0.0;
        for (double x : v) q += (x - m.mean) * (x - m.mean);
        m.se = std::sqrt(q / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    }
    return m;
}

/// Two-sided 95% Student t quantile.
inline double t_quantile_975(std::size_t df)
{
    static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                                   2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
                                   2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
    if (df == 0) return std::numeric_limits<double>::infinity();
    return df <= 30 ? table[df - 1] : 1.96;
}

struct SlopeFit
{
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
    double slope_se = std::numeric_limits<double>::quiet_NaN();
    double ci_low = std::numeric_limits<double>::quiet_NaN();
    double ci_high = std::numeric_limits<double>::quiet_NaN();
    std::size_t points = 0;
};

/// Least squares of log(y) on log(x); NaN when fewer than two positive points.
inline SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y)
{
    SlopeFit f;
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] > 0.0 && y[i] > 0.0)
        {
            lx.push_back(std::log(x[i]));
            ly.push_back(std::log(y[i]));
        }
    f.points = lx.size();
    if (lx.size() < 2) return f;
    const double n = static_cast<double>(lx.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i)
    {
        mx += lx[i] / n;
        my += ly[i] / n;
    }
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i)
    {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (lx.size() > 2)
    {
        double rss = 0.0;
        for (std::size_t i = 0; i < lx.size(); ++i)
        {
            const double r = ly[i] - f.intercept - f.slope * lx[i];
            rss += r * r;
        }
        f.slope_se = std::sqrt(rss / (n - 2.0) / sxx);
        const double q = t_quantile_975(lx.size() - 2);
        f.ci_low = f.slope - q * f.slope_se;
        f.ci_high = f.slope + q * f.slope_se;
    }
    return f;
}

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

/// One replica's value of one metric.
struct ReplicaRow
{
    std::string metric;
    std::size_t n = 0;
    std::size_t replica = 0;
    std::uint64_t seed = 0;
    double value = 0.0;
    std::string argmax_tag = "none";
    double argmax_coord = 0.0;
    double argmax_t = 0.0;
    double adjacent_gap = 0.0;
};

inline ReplicaRow make_row(std::string metric, std::size_t n, std::size_t replica, std::uint64_t seed, const SupDistance& d)
{
    return ReplicaRow{std::move(metric), n, replica, seed, d.value,
                      d.gamma.tag == BoundaryPoint::Tag::initial ? "initial" : "boundary", d.gamma.coord, d.t,
                      d.adjacent_gap};
}

struct SeriesSummary
{
    std::string metric;
    std::vector<std::size_t> n;
    std::vector<MeanSe> stats;
    SlopeFit fit;
    bool consecutive_decrease = false;
    double endpoint_drop = 0.0;
    double pooled_se = 0.0;
    /// Means decrease at every step and the first-to-last drop exceeds two
    /// pooled standard errors.
    bool significant_decrease = false;
};

inline SeriesSummary summarize_series(const std::string& metric, const std::vector<ReplicaRow>& rows)
{
    SeriesSummary s;
    s.metric = metric;
    std::vector<std::vector<double>> per_n;
    for (const auto& r : rows)
    {
        if (r.metric != metric) continue;
        auto it = std::find(s.n.begin(), s.n.end(), r.n);
        if (it == s.n.end())
        {
            s.n.push_back(r.n);
            per_n.emplace_back();
            it = s.n.end() - 1;
        }
        per_n[static_cast<std::size_t>(it - s.n.begin())].push_back(r.value);
    }
    std::vector<double> xs, ms;
    for (std::size_t i = 0; i < s.n.size(); ++i)
    {
        s.stats.push_back(mean_se(per_n[i]));
        xs.push_back(static_cast<double>(s.n[i]));
        ms.push_back(s.stats.back().mean);
    }
    s.fit = fit_loglog(xs, ms);
    if (s.stats.size() >= 2)
    {
        s.consecutive_decrease = true;
        for (std::size_t i = 1; i < s.stats.size(); ++i)
            if (!(s.stats[i].mean < s.stats[i - 1].mean)) s.consecutive_decrease = false;
        const auto& a = s.stats.front();
        const auto& b = s.stats.back();
        s.endpoint_drop = a.mean - b.mean;
        s.pooled_se = std::sqrt(a.se * a.se + b.se * b.se);
        s.significant_decrease = s.consecutive_decrease && s.endpoint_drop > 2.0 * s.pooled_se;
    }
    return s;
}

inline Json to_json(const SeriesSummary& s)
{
    Json j;
    j["metric"] = s.metric;
    Json per = Json::array();
    for (std::size_t i = 0; i < s.n.size(); ++i)
        per.push_back({{"n", s.n[i]}, {"mean", s.stats[i].mean}, {"se", s.stats[i].se}, {"replicas", s.stats[i].count}});
    j["by_n"] = per;
    j["slope"] = number_or_null(s.fit.slope);
    j["slope_ci"] = {number_or_null(s.fit.ci_low), number_or_null(s.fit.ci_high)};
    j["consecutive_decrease"] = s.consecutive_decrease;
    j["endpoint_drop"] = s.endpoint_drop;
    j["pooled_se"] = s.pooled_se;
    j["significant_decrease"] = s.significant_decrease;
    return j;
}

/// Raw per-replica rows plus per-metric summaries derived from them.
struct ConvergenceReport
{
    std::vector<ReplicaRow> rows;
    std::vector<SeriesSummary> series;

    static ConvergenceReport from_rows(std::vector<ReplicaRow> rows)
    {
        ConvergenceReport r;
        r.rows = std::move(rows);
        std::vector<std::string> metrics;
        for (const auto& row : r.rows)
            if (std::find(metrics.begin(), metrics.end(), row.metric) == metrics.end()) metrics.push_back(row.metric);
        for (const auto& m : metrics) r.series.push_back(summarize_series(m, r.rows));
        return r;
    }

    const SeriesSummary& get(const std::string& metric) const
    {
        for (const auto& s : series)
            if (s.metric == metric) return s;
        throw std::out_of_range("no metric " + metric + " in report");
    }

    void write_csv(std::ostream& os) const
    {
        os << "metric,n,replica,seed,value,argmax_tag,argmax_coord,argmax_t,adjacent_gap\n";
        os.precision(17);
        for (const auto& r : rows)
            os << r.metric << ',' << r.n << ',' << r.replica << ',' << r.seed << ',' << r.value << ',' << r.argmax_tag
               << ',' << r.argmax_coord << ',' << r.argmax_t << ',' << r.adjacent_gap << '\n';
    }

    static std::vector<ReplicaRow> read_csv(std::istream& is)
    {
        std::vector<ReplicaRow> rows;
        std::string line;
        std::getline(is, line);
        while (std::getline(is, line))
        {
            if (line.empty()) continue;
            std::vector<std::string> f;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) f.push_back(cell);
            if (f.size() != 9) throw std::runtime_error("malformed report row: " + line);
            rows.push_back({f[0], std::stoul(f[1]), std::stoul(f[2]), std::stoull(f[3]), std::stod(f[4]), f[5],
                            std::stod(f[6]), std::stod(f[7]), std::stod(f[8])});
        }
        return rows;
    }

    Json to_json() const
    {
        Json j = Json::array();
        for (const auto& s : series) j.push_back(srp::to_json(s));
        return j;
    }
};

struct ExperimentPlan
{
    std::shared_ptr<const PopulationSpec> spec;
    std::vector<std::size_t> n_list{100, 400, 1600, 6400};
    std::size_t seeds = 20;
    std::uint64_t base_seed = 1;
    EvaluationLattice lattice;
    std::vector<TestFunction> test_functions{TestFunction::one()};
    SolverOptions solver;
    AssignMode assign = AssignMode::stratified;
    std::size_t workers = 1;
    std::string output_dir; // empty: nothing written

    void validate() const
    {
        if (!spec) throw std::invalid_argument("plan has no population spec");
        if (n_list.empty()) throw std::invalid_argument("plan needs at least one N");
        for (std::size_t i = 0; i < n_list.size(); ++i)
        {
            if (n_list[i] == 0) throw std::invalid_argument("N must be positive");
            if (i > 0 && n_list[i] <= n_list[i - 1]) throw std::invalid_argument("N list must be strictly increasing");
        }
        if (seeds < 2) throw std::invalid_argument("at least 2 seeds per N are required");
        if (lattice.gammas.empty() || lattice.times.empty()) throw std::invalid_argument("plan lattice is empty");
    }

    /// Replica seed, shared by every N so particle i sees the same candidates.
    std::uint64_t replica_seed(std::size_t r) const { return mix64(base_seed * 0x9e3779b97f4a7c15ULL + r); }

    static ExperimentPlan standard(std::shared_ptr<const PopulationSpec> spec)
    {
        ExperimentPlan p;
        p.lattice = EvaluationLattice::standard(spec->horizon());
        for (std::size_t k = 0; k < spec->size() && spec->size() > 1; ++k)
            p.test_functions.push_back(TestFunction::class_indicator(k));
        p.spec = std::move(spec);
        return p;
    }
};

inline std::string metric_name(const TestFunction& h) { return "phi_" + h.name(); }

inline void write_outputs(const std::string& dir, const std::string& name, const std::function<void(std::ostream&)>& csv,
                          const Json& summary)
{
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    if (csv)
    {
        std::ofstream os(std::filesystem::path(dir) / (name + ".csv"));
        csv(os);
    }
    std::ofstream js(std::filesystem::path(dir) / (name + ".json"));
    js << summary.dump(2) << '\n';
}

namespace detail {

struct Job
{
    std::size_t n_index;
    std::size_t replica;
};

inline std::vector<Job> jobs(const ExperimentPlan& plan)
{
    std::vector<Job> out;
    for (std::size_t i = 0; i < plan.n_list.size(); ++i)
        for (std::size_t r = 0; r < plan.seeds; ++r) out.push_back({i, r});
    return out;
}

inline std::vector<PopulationAssignment> assignments(const ExperimentPlan& plan)
{
    std::vector<PopulationAssignment> out;
    for (auto n : plan.n_list) out.push_back(assign_population(plan.spec, n, plan.assign, plan.base_seed));
    return out;
}

template <class F>
std::vector<ReplicaRow> run_jobs(const ExperimentPlan& plan, F&& per_job)
{
    const auto js = jobs(plan);
    auto nested = parallel_map<std::vector<ReplicaRow>>(js.size(), plan.workers, [&](std::size_t j) {
        return per_job(js[j].n_index, js[j].replica, plan.replica_seed(js[j].replica));
    });
    std::vector<ReplicaRow> rows;
    for (auto& v : nested)
        for (auto& r : v) rows.push_back(std::move(r));
    return rows;
}

inline Json decrease_check(const SeriesSummary& s, double slope_max)
{
    const bool slope_ok = std::isfinite(s.fit.slope) && s.fit.slope <= slope_max;
    return {{"metric", s.metric},
            {"significant_decrease", s.significant_decrease},
            {"slope", number_or_null(s.fit.slope)},
            {"slope_max", slope_max},
            {"pass", s.significant_decrease && slope_ok}};
}

} // namespace detail

/// Original model against phi_{y_C} for every test function of the plan.
inline ConvergenceReport convergence_sweep(const ExperimentPlan& plan, const LimitSolution& sol)
{
    plan.validate();
    if (sol.spec_hash() != plan.spec->hash()) throw std::invalid_argument("limit solution belongs to another spec");
    std::vector<LatticeValues> refs;
    for (const auto& h : plan.test_functions) refs.push_back(phi_limit_lattice(sol.phi(), h, plan.lattice));
    const auto assign = detail::assignments(plan);
    const double horizon = plan.spec->horizon();
    auto rows = detail::run_jobs(plan, [&](std::size_t ni, std::size_t r, std::uint64_t seed) {
        const auto log = simulate(assign[ni], horizon, seed);
        const LogIndex idx(log);
        std::vector<ReplicaRow> out;
        for (std::size_t k = 0; k < plan.test_functions.size(); ++k)
        {
            const auto& h = plan.test_functions[k];
            out.push_back(make_row(metric_name(h), plan.n_list[ni], r, seed,
                                   sup_difference(phi_n_lattice(idx, h, plan.lattice), refs[k])));
        }
        return out;
    });
    auto report = ConvergenceReport::from_rows(std::move(rows));
    if (!plan.output_dir.empty())
    {
        Json summary{{"experiment", "convergence"}, {"series", report.to_json()}, {"checks", Json::array()}};
        for (const auto& s : report.series) summary["checks"].push_back(detail::decrease_check(s, -0.3));
        write_outputs(plan.output_dir, "convergence", [&](std::ostream& os) { report.write_csv(os); }, summary);
    }
    return report;
}

struct FlowDrivenReport
{
    ConvergenceReport report;
    /// Lattice sup of |1 - phi_theta(W) - theta|: where the curves of a
    /// flow-driven system go as N grows, minus theta itself.
    double theta_floor = 0.0;

    /// The distance of Y^{N,theta}_C to theta never drops below the floor by
    /// more than 4 standard errors, and the floor is clearly positive.
    bool stays_above_floor(double min_floor = 0.05) const
    {
        if (!(theta_floor >= min_floor)) return false;
        const auto& s = report.get("curve_to_theta");
        for (const auto& st : s.stats)
            if (st.mean < theta_floor - 4.0 * st.se - 1e-12) return false;
        return true;
    }
};

/// Flow-driven model against phi_theta; also Y^{N,theta}_C against theta and
/// against 1 - phi_theta(W).
inline FlowDrivenReport flow_driven_sweep(const ExperimentPlan& plan, std::shared_ptr<const FlowGrid> theta)
{
    plan.validate();
    const PhiEvaluator phi(theta, plan.spec);
    std::vector<LatticeValues> refs;
    for (const auto& h : plan.test_functions) refs.push_back(phi_limit_lattice(phi, h, plan.lattice));
    const auto theta_ref = evaluate_lattice(plan.lattice, [&](std::size_t g, std::size_t k) {
        return theta->at(plan.lattice.gammas[g], plan.lattice.times[k]);
    });
    const auto map_ref = evaluate_lattice(plan.lattice, [&](std::size_t g, std::size_t k) {
        return 1.0 - phi(TestFunction::one(), plan.lattice.gammas[g], plan.lattice.times[k]);
    });
    FlowDrivenReport out;
    out.theta_floor = sup_difference(map_ref, theta_ref).value;

    const auto assign = detail::assignments(plan);
    const double horizon = plan.spec->horizon();
    auto rows = detail::run_jobs(plan, [&](std::size_t ni, std::size_t r, std::uint64_t seed) {
        const auto log = simulate_flow_driven(assign[ni], *theta, horizon, seed);
        const LogIndex idx(log);
        const auto n = plan.n_list[ni];
        std::vector<ReplicaRow> rs;
        for (std::size_t k = 0; k < plan.test_functions.size(); ++k)
            rs.push_back(make_row(metric_name(plan.test_functions[k]), n, r, seed,
                                  sup_difference(phi_n_lattice(idx, plan.test_functions[k], plan.lattice), refs[k])));
        const auto curves = char_curve_lattice(idx, plan.lattice);
        rs.push_back(make_row("curve_to_theta", n, r, seed, sup_difference(curves, theta_ref)));
        rs.push_back(make_row("curve_to_map", n, r, seed, sup_difference(curves, map_ref)));
        return rs;
    });
    out.report = ConvergenceReport::from_rows(std::move(rows));
    if (!plan.output_dir.empty())
    {
        Json summary{{"experiment", "flow_driven"},
                     {"theta_floor", out.theta_floor},
                     {"series", out.report.to_json()},
                     {"checks", Json::array()}};
        for (const auto& h : plan.test_functions)
            summary["checks"].push_back(detail::decrease_check(out.report.get(metric_name(h)), -0.3));
        summary["checks"].push_back({{"metric", "curve_to_theta"}, {"pass", out.stays_above_floor()}});
        write_outputs(plan.output_dir, "flow_driven", [&](std::ostream& os) { out.report.write_csv(os); }, summary);
    }
    return out;
}

/// Fraction of particles whose original and flow-driven copies (theta = y_C)
/// ever disagree on [0,T].
inline ConvergenceReport coupling_sweep(const ExperimentPlan& plan, const LimitSolution& sol)
{
    plan.validate();
    const auto assign = detail::assignments(plan);
    const double horizon = plan.spec->horizon();
    auto rows = detail::run_jobs(plan, [&](std::size_t ni, std::size_t r, std::uint64_t seed) {
        const auto run = simulate_coupled(assign[ni], sol.y_c(), horizon, seed);
        ReplicaRow row;
        row.metric = "decoupled_fraction";
        row.n = plan.n_list[ni];
        row.replica = r;
        row.seed = seed;
        row.value = run.coupling.decoupled_fraction();
        return std::vector<ReplicaRow>{row};
    });
    auto report = ConvergenceReport::from_rows(std::move(rows));
    if (!plan.output_dir.empty())
    {
        const auto& s = report.get("decoupled_fraction");
        double max_value = 0.0;
        for (const auto& row : report.rows) max_value = std::max(max_value, row.value);
        Json summary{{"experiment", "coupling"},
                     {"position_independent", plan.spec->position_independent()},
                     {"series", report.to_json()},
                     {"checks",
                      {{{"metric", "decoupled_fraction"},
                        {"pass", plan.spec->position_independent() ? max_value == 0.0 : s.significant_decrease}}}}};
        write_outputs(plan.output_dir, "coupling", [&](std::ostream& os) { report.write_csv(os); }, summary);
    }
    return report;
}

struct TaggedParticle
{
    std::size_t class_index = 0;
    double y = 0.0;
};

/// Relabels particles so that particle l has the class of tagged[l] and the
/// slot of that class closest to y_l N. Particle labels key the candidate
/// streams, so tagged particle l draws the same candidates for every N.
inline PopulationAssignment place_tagged(PopulationAssignment a, const std::vector<TaggedParticle>& tagged)
{
    const auto n = a.size();
    if (tagged.size() > n) throw std::invalid_argument("more tagged particles than particles");
    for (std::size_t l = 0; l < tagged.size(); ++l)
    {
        const auto& tp = tagged[l];
        if (tp.class_index >= a.spec->size()) throw std::invalid_argument("tagged particle class out of range");
        std::size_t best = n;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = l; i < n; ++i)
        {
            if (a.class_of[i] != tp.class_index) continue;
            const double d = std::abs(static_cast<double>(a.slot[i]) - tp.y * static_cast<double>(n));
            if (d < best_d)
            {
                best_d = d;
                best = i;
            }
        }
        if (best == n) throw std::invalid_argument("no particle of the tagged class is available");
        std::swap(a.class_of[l], a.class_of[best]);
        std::swap(a.slot[l], a.slot[best]);
    }
    return a;
}

struct TaggedRow
{
    std::size_t n = 0;
    std::size_t replica = 0;
    std::size_t tagged = 0;
    double initial_gap = 0.0; // |y^N_l - y_l|
    double sup_diff = 0.0;    // sup_t |Y^N_l(t) - Y_l(t)|
    std::size_t jumps_finite = 0;
    std::size_t jumps_limit = 0;
};

struct TaggedReport
{
    std::vector<TaggedRow> rows;
    std::vector<std::size_t> n_list;
    std::vector<std::vector<MeanSe>> sup_diff; // [tagged][n]
    double correlation = std::numeric_limits<double>::quiet_NaN(); // jump counts of tagged 0 and 1 at the largest N
    double correlation_se = std::numeric_limits<double>::quiet_NaN();
    /// max over runs of |sup_diff - initial_gap|; zero when nothing jumps.
    double max_excess_over_initial = 0.0;

    bool decreasing(std::size_t l) const
    {
        const auto& s = sup_diff.at(l);
        for (std::size_t i = 1; i < s.size(); ++i)
            if (!(s[i].mean < s[i - 1].mean)) return false;
        return s.size() >= 2 &&
               s.front().mean - s.back().mean > 2.0 * std::sqrt(s.front().se * s.front().se + s.back().se * s.back().se);
    }

    bool correlation_ok() const { return std::isfinite(correlation) && std::abs(correlation) <= 4.0 * correlation_se; }

    void write_csv(std::ostream& os) const
    {
        os << "n,replica,tagged,initial_gap,sup_diff,jumps_finite,jumps_limit\n";
        os.precision(17);
        for (const auto& r : rows)
            os << r.n << ',' << r.replica << ',' << r.tagged << ',' << r.initial_gap << ',' << r.sup_diff << ','
               << r.jumps_finite << ',' << r.jumps_limit << '\n';
    }

    Json to_json() const
    {
        Json j;
        j["n"] = n_list;
        Json per = Json::array();
        for (std::size_t l = 0; l < sup_diff.size(); ++l)
        {
            Json means = Json::array(), ses = Json::array();
            for (const auto& s : sup_diff[l])
            {
                means.push_back(s.mean);
                ses.push_back(s.se);
            }
            per.push_back({{"tagged", l}, {"mean_sup_diff", means}, {"se", ses}, {"decreasing", decreasing(l)}});
        }
        j["tagged"] = per;
        j["correlation"] = number_or_null(correlation);
        j["correlation_se"] = number_or_null(correlation_se);
        j["max_excess_over_initial"] = max_excess_over_initial;
        return j;
    }
};

/// Exact sup over [0,T] of |Y^N(t) - Y(t)| for a step path against a limit
/// path that is continuous between its own jumps: both one-sided limits are
/// checked at every breakpoint of either path.
inline double path_sup_difference(const RankPath& finite, std::size_t n, const TaggedPath& limit, const FlowGrid& flow,
                                  double horizon)
{
    std::vector<double> points = finite.times;
    points.insert(points.end(), limit.jump_times().begin(), limit.jump_times().end());
    points.push_back(horizon);
    std::sort(points.begin(), points.end());
    const double dn = static_cast<double>(n);
    const auto& jumps = limit.jump_times();
    double sup = 0.0;
    for (double t : points)
    {
        const double right = std::abs(static_cast<double>(finite.at(t)) / dn - limit.position(t));
        sup = std::max(sup, right);
        if (t <= 0.0) continue;
        // left limits
        const auto it = std::upper_bound(finite.times.begin(), finite.times.end(), t);
        auto k = static_cast<std::size_t>(it - finite.times.begin()) - 1;
        if (finite.times[k] == t && k > 0) --k;
        const auto jt = std::lower_bound(jumps.begin(), jumps.end(), t);
        const BoundaryPoint g = jt == jumps.begin() ? BoundaryPoint::initial(limit.y0()) : BoundaryPoint::boundary(*(jt - 1));
        sup = std::max(sup, std::abs(static_cast<double>(finite.ranks[k]) / dn - flow.at(g, t)));
    }
    return sup;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b)
{
    const auto ma = mean_se(a).mean, mb = mean_se(b).mean;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
    {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

/// Tagged particles of the original model against limit paths driven by the
/// same candidate streams.
inline TaggedReport tagged_compare(const ExperimentPlan& plan, const LimitSolution& sol,
                                   const std::vector<TaggedParticle>& tagged)
{
    plan.validate();
    if (tagged.empty()) throw std::invalid_argument("no tagged particles");
    const double horizon = plan.spec->horizon();
    std::vector<PopulationAssignment> assign;
    for (auto n : plan.n_list)
        assign.push_back(place_tagged(assign_population(plan.spec, n, plan.assign, plan.base_seed), tagged));
    const auto js = detail::jobs(plan);
    auto nested = parallel_map<std::vector<TaggedRow>>(js.size(), plan.workers, [&](std::size_t j) {
        const auto [ni, r] = js[j];
        const auto seed = plan.replica_seed(r);
        const auto& a = assign[ni];
        const auto log = simulate(a, horizon, seed);
        std::vector<TaggedRow> out;
        for (std::size_t l = 0; l < tagged.size(); ++l)
        {
            const auto& w = (*plan.spec)[tagged[l].class_index].field;
            const auto limit = tagged_limit_path(sol, w, tagged[l].y, seed, l);
            const auto finite = track_particle(log, static_cast<std::uint32_t>(l));
            TaggedRow row;
            row.n = plan.n_list[ni];
            row.replica = r;
            row.tagged = l;
            row.initial_gap = std::abs(a.position(l) - tagged[l].y);
            row.sup_diff = path_sup_difference(finite, a.size(), limit, sol.y_c(), horizon);
            row.jumps_limit = limit.jump_times().size();
            for (std::size_t e = 0; e < log.size(); ++e) row.jumps_finite += log.particle(e) == l ? 1 : 0;
            out.push_back(row);
        }
        return out;
    });
    TaggedReport rep;
    rep.n_list = plan.n_list;
    for (auto& v : nested)
        for (auto& r : v) rep.rows.push_back(r);
    rep.sup_diff.assign(tagged.size(), {});
    for (std::size_t l = 0; l < tagged.size(); ++l)
        for (auto n : plan.n_list)
        {
            std::vector<double> v;
            for (const auto& r : rep.rows)
                if (r.n == n && r.tagged == l) v.push_back(r.sup_diff);
            rep.sup_diff[l].push_back(mean_se(v));
        }
    for (const auto& r : rep.rows) rep.max_excess_over_initial = std::max(rep.max_excess_over_initial, std::abs(r.sup_diff - r.initial_gap));
    if (tagged.size() >= 2)
    {
        // rows are ordered by (n, replica, tagged)
        std::vector<double> a, b;
        for (const auto& row : rep.rows)
        {
            if (row.n != plan.n_list.back()) continue;
            if (row.tagged == 0) a.push_back(static_cast<double>(row.jumps_finite));
            if (row.tagged == 1) b.push_back(static_cast<double>(row.jumps_finite));
        }
        rep.correlation = pearson(a, b);
        rep.correlation_se = 1.0 / std::sqrt(static_cast<double>(b.size()));
    }
    if (!plan.output_dir.empty())
        write_outputs(plan.output_dir, "tagged", [&](std::ostream& os) { rep.write_csv(os); },
                      Json{{"experiment", "tagged"}, {"report", rep.to_json()}});
    return rep;
}

struct LatpCase
{
    std::string name;
    LatpIntensity omega;
};

struct LatpCaseReport
{
    std::string name;
    double series_gap = 0.0;     // max |solve - series| on the test lattice
    double series_tol = 0.0;     // 1e-5 + 5 h^2
    double max_z = 0.0;          // max |MC - solve| / MC standard error
    double max_mc_gap = 0.0;
    DerivativeReport derivatives;
    double derivative_tol = 0.0;

    bool series_ok() const { return series_gap <= series_tol; }
    bool mc_ok() const { return max_z <= 4.0; }
    bool derivatives_ok() const { return derivatives.clean(derivative_tol); }
    bool ok() const { return series_ok() && mc_ok() && derivatives_ok(); }
};

struct LatpReport
{
    std::vector<LatpCaseReport> cases;

    bool ok() const
    {
        return std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.ok(); });
    }

    Json to_json() const
    {
        Json j = Json::array();
        for (const auto& c : cases)
            j.push_back({{"omega", c.name},
                         {"series_gap", c.series_gap},
                         {"series_tol", c.series_tol},
                         {"max_mc_z", c.max_z},
                         {"max_mc_gap", c.max_mc_gap},
                         {"derivative_t_violation", c.derivatives.max_t_violation},
                         {"derivative_s_violation", c.derivatives.max_s_violation},
                         {"derivative_tol", c.derivative_tol},
                         {"pass", c.ok()}});
        return j;
    }
};

struct LatpValidationOptions
{
    double horizon = 1.0;
    std::size_t steps = 400;
    std::size_t replicas = 10000;
    std::size_t lattice = 5;
    std::size_t kmax = 25;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    std::string output_dir;
};

/// Renewal solver vs explicit series vs Monte Carlo on an s,t lattice.
inline LatpReport latp_validation(const std::vector<LatpCase>& cases, const LatpValidationOptions& opt = {})
{
    const TimeGrid grid(opt.horizon, opt.steps);
    const double h = grid.step();
    std::vector<double> pts;
    for (std::size_t i = 0; i < opt.lattice; ++i)
        pts.push_back(i + 1 == opt.lattice ? opt.horizon
                                           : opt.horizon * static_cast<double>(i) / static_cast<double>(opt.lattice - 1));
    auto reports = parallel_map<LatpCaseReport>(cases.size(), opt.workers, [&](std::size_t c) {
        const auto& omega = cases[c].omega;
        LatpCaseReport rep;
        rep.name = cases[c].name;
        rep.series_tol = 1e-5 + 5.0 * h * h;
        const auto table = survival_solve(omega, grid);
        std::vector<std::size_t> hits(opt.lattice * opt.lattice, 0);
        const double env = default_envelope(omega);
        for (std::size_t r = 0; r < opt.replicas; ++r)
        {
            CounterRng rng(opt.seed, r);
            const auto seq = sample_arrivals(omega, opt.horizon, env, rng);
            for (std::size_t i = 0; i < opt.lattice; ++i)
                for (std::size_t j = i; j < opt.lattice; ++j)
                    if (seq.no_arrival_in(pts[i], pts[j])) ++hits[i * opt.lattice + j];
        }
        for (std::size_t i = 0; i < opt.lattice; ++i)
            for (std::size_t j = i; j < opt.lattice; ++j)
            {
                const double p = table.value(pts[i], pts[j]);
                const double series = survival_series(omega, pts[i], pts[j], opt.kmax, h);
                rep.series_gap = std::max(rep.series_gap, std::abs(series - p));
                const double mc = static_cast<double>(hits[i * opt.lattice + j]) / static_cast<double>(opt.replicas);
                const double se = std::sqrt(std::clamp(p, 0.0, 1.0) * (1.0 - std::clamp(p, 0.0, 1.0)) /
                                            static_cast<double>(opt.replicas));
                const double gap = std::abs(mc - p);
                rep.max_mc_gap = std::max(rep.max_mc_gap, gap);
                // p in {0,1} has no spread: any gap beyond rounding counts as a miss
                const double z = se > 0.0 ? gap / se : (gap > 1e-12 ? std::numeric_limits<double>::infinity() : 0.0);
                rep.max_z = std::max(rep.max_z, z);
            }
        rep.derivatives = derivative_bound_check(table, omega);
        const double norm = omega.sup_norm();
        rep.derivative_tol = (1.0 + norm) * (1.0 + norm) * h;
        return rep;
    });
    LatpReport out{std::move(reports)};
    if (!opt.output_dir.empty())
        write_outputs(opt.output_dir, "latp", nullptr, Json{{"experiment", "latp"}, {"cases", out.to_json()}, {"pass", out.ok()}});
    return out;
}

} // namespace srp
