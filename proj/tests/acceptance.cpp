// Acceptance run: one PASS/FAIL line per criterion with its tolerance.

#include "support.hpp"

#include "srp/harness.hpp"
#include "srp/order_index.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

using namespace srp;

namespace {

using G = BoundaryPoint;

struct Outcome
{
    bool pass = false;
    std::string detail;
};

std::size_t workers() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string out_dir(const std::string& name)
{
    const char* env = std::getenv("SRP_OUTPUT_DIR");
    return std::string(env && *env ? env : "acceptance_out") + "/" + name;
}

std::string fmt(double v)
{
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

std::string series_line(const SeriesSummary& s)
{
    std::ostringstream os;
    os << s.metric << " means";
    for (const auto& st : s.stats) os << ' ' << fmt(st.mean);
    os << " slope " << fmt(s.fit.slope) << " drop " << fmt(s.endpoint_drop) << " vs 2se " << fmt(2 * s.pooled_se);
    return os.str();
}

bool decreasing_with_slope(const SeriesSummary& s) { return s.significant_decrease && s.fit.slope <= -0.3; }

Outcome exact_identities()
{
    const auto spec = test::shipped("affine_two_class.yaml");
    const auto sol = solve_y_c(spec);
    const auto lattice = EvaluationLattice::standard(1.0);
    std::size_t runs = 0, phi_points = 0, particle_checks = 0;
    for (std::size_t n : {1u, 2u, 10u, 100u, 1000u})
        for (std::uint64_t seed = 1; seed <= 5; ++seed)
        {
            const auto a = assign_population(spec, n);
            for (const auto& log : {simulate(a, 1.0, seed), simulate_flow_driven(a, sol.y_c(), 1.0, seed)})
            {
                // lattice times plus every event boundary of the run
                auto times = lattice.times;
                times.insert(times.end(), log.times().begin(), log.times().end());
                std::sort(times.begin(), times.end());
                times.erase(std::unique(times.begin(), times.end()), times.end());
                const auto rep = check_identities(log, lattice, times);
                ++runs;
                phi_points += rep.phi_points;
                particle_checks += rep.particle_checks;
                if (!rep.ok())
                    return {false, "N=" + std::to_string(n) + " seed " + std::to_string(seed) + ": " + rep.first_failure};
            }
        }
    return {true, std::to_string(runs) + " runs, " + std::to_string(phi_points) + " lattice identities, " +
                      std::to_string(particle_checks) + " particle identities, 0 violations"};
}

Outcome closed_form_limit()
{
    SolverOptions opt; // dt = 1/200, tol = 1e-8
    const double dt = 1.0 / static_cast<double>(opt.t_steps);
    const double tol = 10 * (dt * dt + opt.tol);
    double worst = 0.0;
    const std::vector<std::pair<std::string, std::shared_ptr<const PopulationSpec>>> specs{
        {"constant_rate.yaml", test::shipped("constant_rate.yaml")},
        {"two_constant_classes.yaml", test::shipped("two_constant_classes.yaml")}};
    for (const auto& [name, spec] : specs)
    {
        const auto sol = solve_y_c(spec, opt);
        const auto decay = [&spec = *spec](double elapsed) {
            double s = 0.0;
            for (const auto& c : spec.classes()) s += c.weight * std::exp(-c.field.sup_norm() * elapsed);
            return s;
        };
        const auto& y = sol.y_c();
        for (std::size_t j = 0; j <= y.z_steps(); ++j)
            for (std::size_t n = 0; n <= y.t_steps(); ++n)
                worst = std::max(worst, std::abs(y.initial(j, n) - (1 - (1 - y.z_node(j)) * decay(y.t_node(n)))));
        for (std::size_t k = 0; k <= y.t_steps(); ++k)
            for (std::size_t n = k; n <= y.t_steps(); ++n)
                worst = std::max(worst, std::abs(y.boundary(k, n) - (1 - decay(y.t_node(n) - y.t_node(k)))));
        worst = std::max(worst, std::abs(y(G::initial(0.5), 1.0) - (1 - 0.5 * decay(1.0))));
    }
    return {worst <= tol, "max grid error " + fmt(worst) + " <= " + fmt(tol)};
}

Outcome point_process()
{
    const auto spec = test::shipped("affine_two_class.yaml");
    const auto sol = solve_y_c(spec);
    std::vector<LatpCase> cases{{"zero", LatpIntensity::constant(0.0)},
                                {"constant_2", LatpIntensity::constant(2.0)},
                                {"one_plus_s", LatpIntensity([](double s, double) { return 1.0 + s; }, 2.0)},
                                {"flow_affine", tilde_w(sol.y_c_ptr(), (*spec)[0].field, 0.5)}};
    LatpValidationOptions opt; // h = 1/400, 10^4 paths, 5x5 lattice, kmax = 25
    opt.workers = workers();
    opt.output_dir = out_dir("c3");
    const auto rep = latp_validation(cases, opt);
    std::ostringstream os;
    for (const auto& c : rep.cases)
        os << c.name << " series " << fmt(c.series_gap) << "/" << fmt(c.series_tol) << " mc z " << fmt(c.max_z) << "/4 "
           << (c.derivatives_ok() ? "" : "derivative bounds violated ") << "; ";
    return {rep.ok(), os.str()};
}

Outcome hydrodynamic()
{
    const auto spec = test::shipped("affine_two_class.yaml");
    auto plan = ExperimentPlan::standard(spec); // N = 100..6400, 20 seeds, h = 1 and class indicators
    plan.workers = workers();
    plan.output_dir = out_dir("c4");
    const auto sol = solve_y_c(spec, plan.solver);
    const auto rep = convergence_sweep(plan, sol);
    bool pass = true;
    std::string detail;
    for (const auto& s : rep.series)
    {
        pass = pass && decreasing_with_slope(s);
        detail += series_line(s) + "; ";
    }
    return {pass, detail};
}

Outcome flow_driven()
{
    const auto spec = test::shipped("affine_two_class.yaml");
    auto plan = ExperimentPlan::standard(spec);
    plan.workers = workers();
    plan.output_dir = out_dir("c5");
    const auto id = std::make_shared<const FlowGrid>(plan.solver.z_steps, plan.solver.t_steps, spec->horizon());
    const auto rep = flow_driven_sweep(plan, id);
    bool pass = rep.stays_above_floor();
    std::string detail;
    for (const auto& h : plan.test_functions)
    {
        const auto& s = rep.report.get(metric_name(h));
        pass = pass && decreasing_with_slope(s);
        detail += series_line(s) + "; ";
    }
    const auto& c = rep.report.get("curve_to_theta");
    detail += "curve_to_theta means";
    for (const auto& st : c.stats) detail += " " + fmt(st.mean);
    detail += " vs floor " + fmt(rep.theta_floor) + " (>= 0.05, no mean below floor - 4se)";
    return {pass, detail};
}

Outcome coupling()
{
    bool pass = true;
    std::string detail;
    for (const char* name : {"constant_rate.yaml", "two_constant_classes.yaml"})
    {
        const auto spec = test::shipped(name);
        auto plan = ExperimentPlan::standard(spec);
        plan.n_list = {100, 400, 1600};
        plan.seeds = 10;
        plan.workers = workers();
        const auto rep = coupling_sweep(plan, solve_y_c(spec, plan.solver));
        double worst = 0.0;
        for (const auto& r : rep.rows) worst = std::max(worst, r.value);
        pass = pass && worst == 0.0;
        detail += std::string(name) + " max fraction " + fmt(worst) + " (== 0); ";
    }
    const auto spec = test::shipped("affine_two_class.yaml");
    auto plan = ExperimentPlan::standard(spec);
    plan.n_list = {100, 400, 1600};
    plan.seeds = 50;
    plan.workers = workers();
    plan.output_dir = out_dir("c6");
    const auto rep = coupling_sweep(plan, solve_y_c(spec, plan.solver));
    const auto& s = rep.get("decoupled_fraction");
    pass = pass && s.significant_decrease;
    return {pass, detail + "affine " + series_line(s)};
}

Outcome tagged()
{
    bool pass = true;
    std::string detail;
    {
        const auto spec = test::shipped("affine_two_class.yaml");
        auto plan = ExperimentPlan::standard(spec);
        plan.n_list = {100, 400, 1600};
        plan.seeds = 50;
        plan.workers = workers();
        plan.output_dir = out_dir("c7");
        const auto rep = tagged_compare(plan, solve_y_c(spec, plan.solver), {{0, 0.25}, {1, 0.75}});
        for (std::size_t l = 0; l < rep.sup_diff.size(); ++l)
        {
            pass = pass && rep.decreasing(l);
            detail += "affine tagged " + std::to_string(l) + " sup diff";
            for (const auto& m : rep.sup_diff[l]) detail += " " + fmt(m.mean);
            detail += rep.decreasing(l) ? " decreasing; " : " NOT decreasing; ";
        }
    }
    {
        const auto spec = test::shipped("zero_rate.yaml");
        auto plan = ExperimentPlan::standard(spec);
        plan.n_list = {100, 400, 1600};
        plan.seeds = 5;
        const auto rep = tagged_compare(plan, solve_y_c(spec, plan.solver), {{0, 0.25}, {0, 0.5}});
        pass = pass && rep.max_excess_over_initial == 0.0;
        detail += "zero rate max |sup diff - initial gap| " + fmt(rep.max_excess_over_initial) + " (== 0); ";
    }
    {
        const auto spec = test::shipped("constant_rate.yaml");
        auto plan = ExperimentPlan::standard(spec);
        plan.n_list = {100, 400, 1600};
        plan.seeds = 200;
        plan.workers = workers();
        const auto rep = tagged_compare(plan, solve_y_c(spec, plan.solver), {{0, 0.25}, {0, 0.75}});
        pass = pass && rep.correlation_ok();
        detail += "constant rate jump-count correlation at N=1600 " + fmt(rep.correlation) + " (|r| <= 4se = " +
                  fmt(4 * rep.correlation_se) + ")";
    }
    return {pass, detail};
}

Outcome engine_oracles()
{
    bool pass = true;
    std::string detail;
    {
        const auto spec = test::two_constant(1.0, 3.0, 50.0);
        const double c0 = assign_population(spec, 2).field(0).sup_norm();
        const double target = c0 / 4.0;
        const std::size_t reps = 10000;
        const auto v = parallel_map<double>(reps, workers(), [&](std::size_t r) { return test::top_occupancy(spec, 50.0, r + 1); });
        const auto m = mean_se(v);
        const bool ok = std::abs(m.mean - target) <= 3 * m.se;
        pass = pass && ok;
        detail += "CTMC occupancy " + fmt(m.mean) + " vs " + fmt(target) + " (3se = " + fmt(3 * m.se) + "); ";
    }
    {
        const std::uint32_t n = 1000;
        std::vector<std::uint32_t> start(n);
        for (std::uint32_t i = 0; i < n; ++i) start[i] = (i * 7919) % n;
        OrderIndex idx(start);
        std::vector<std::uint32_t> order(n);
        for (std::uint32_t i = 0; i < n; ++i) order[start[i]] = i;
        std::mt19937_64 gen(7);
        std::size_t mismatches = 0;
        for (int op = 0; op < 100000; ++op)
        {
            const auto p = static_cast<std::uint32_t>(gen() % n);
            if (gen() % 2 == 0)
            {
                idx.move_to_front(p);
                const auto it = std::find(order.begin(), order.end(), p);
                std::rotate(order.begin(), it, it + 1);
            }
            else if (idx.rank_of(p) != static_cast<std::uint32_t>(std::find(order.begin(), order.end(), p) - order.begin()))
                ++mismatches;
        }
        const auto r = idx.ranks();
        for (std::uint32_t k = 0; k < n; ++k) mismatches += r[order[k]] != k ? 1 : 0;
        pass = pass && mismatches == 0;
        detail += "order index vs naive array over 1e5 ops: " + std::to_string(mismatches) + " mismatches; ";
    }
    {
        const auto spec = test::shipped("affine_two_class.yaml");
        const auto sol = solve_y_c(spec);
        std::size_t differing = 0, runs = 0;
        for (std::size_t n : {10u, 1000u})
            for (std::uint64_t seed = 1; seed <= 5; ++seed)
            {
                const auto a = assign_population(spec, n);
                differing += simulate(a, 1.0, seed).to_bytes() != simulate(a, 1.0, seed).to_bytes();
                differing += simulate_flow_driven(a, sol.y_c(), 1.0, seed).to_bytes() !=
                             simulate_flow_driven(a, sol.y_c(), 1.0, seed).to_bytes();
                const auto x = simulate_coupled(a, sol.y_c(), 1.0, seed);
                const auto y = simulate_coupled(a, sol.y_c(), 1.0, seed);
                differing += x.original.to_bytes() != y.original.to_bytes() || x.coupling.sigma != y.coupling.sigma;
                runs += 3;
            }
        auto plan = ExperimentPlan::standard(spec);
        plan.n_list = {50, 200};
        plan.seeds = 4;
        std::string first;
        for (std::size_t w : {std::size_t{1}, workers() + 1})
        {
            plan.workers = w;
            std::ostringstream os;
            convergence_sweep(plan, sol).write_csv(os);
            if (first.empty())
                first = os.str();
            else
                differing += os.str() != first;
            ++runs;
        }
        pass = pass && differing == 0;
        detail += "byte reproducibility: " + std::to_string(differing) + "/" + std::to_string(runs) + " runs differ";
    }
    return {pass, detail};
}

} // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"exact identities, zero tolerance", exact_identities},
        {"closed-form limit, tol 10(dt^2 + tol)", closed_form_limit},
        {"point-process agreement, series 1e-5 + 5h^2, MC 4 se", point_process},
        {"hydrodynamic convergence, decrease > 2 pooled se and slope <= -0.3", hydrodynamic},
        {"flow-driven LLN and uniqueness floor", flow_driven},
        {"coupling decay, exact zero / decrease > 2 pooled se", coupling},
        {"tagged particles, decrease / exact / |r| <= 4 se", tagged},
        {"engine oracles, CTMC 3 se / naive index / bytes", engine_oracles},
    };
    int failures = 0;
    for (std::size_t c = 0; c < criteria.size(); ++c)
    {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try
        {
            o = criteria[c].second();
        }
        catch (const std::exception& e)
        {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += o.pass ? 0 : 1;
        std::printf("criterion %zu: %s  %s  [%.1fs]\n    %s\n", c + 1, o.pass ? "PASS" : "FAIL", criteria[c].first.c_str(),
                    secs, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
