// srp_cli: validate specs, solve the limit flow, simulate, and run experiments.
//
// Exit codes: 0 success, 1 invalid input, 2 solver did not converge,
// 3 an experiment check failed. SRP_OUTPUT_DIR overrides --out.

#include "srp/config.hpp"
#include "srp/flow.hpp"
#include "srp/harness.hpp"
#include "srp/latp.hpp"
#include "srp/measure.hpp"
#include "srp/ranking_process.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace srp;

namespace {

constexpr int kInvalid = 1;
constexpr int kNoConvergence = 2;
constexpr int kCheckFailed = 3;

struct Common
{
    std::string spec_path;
    std::string out = "out";
    std::size_t workers = 1;
    bool verbose = false;
};

struct SolveArgs
{
    std::size_t z_steps = 200;
    std::size_t t_steps = 200;
    double tol = 1e-8;
    std::size_t max_iter = 500;
    double damping = 1.0;
    bool no_cache = false;
};

struct PlanArgs
{
    std::vector<std::size_t> n;
    std::size_t seeds = 0;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

std::string output_dir(const Common& c)
{
    if (const char* env = std::getenv("SRP_OUTPUT_DIR"); env && *env) return env;
    return c.out;
}

void add_solver_flags(CLI::App* cmd, SolveArgs& s)
{
    cmd->add_option("--z-steps", s.z_steps, "initial-point grid cells in [0,1]")->check(CLI::Range(1, 100000));
    cmd->add_option("--t-steps", s.t_steps, "time grid steps on [0,T]")->check(CLI::Range(1, 100000));
    cmd->add_option("--tol", s.tol, "fixed-point residual tolerance")->check(CLI::PositiveNumber);
    cmd->add_option("--max-iter", s.max_iter, "Picard iteration cap")->check(CLI::Range(1, 1000000));
    cmd->add_option("--damping", s.damping, "Picard damping alpha in (0,1]")->check(CLI::Range(1e-6, 1.0));
    cmd->add_flag("--no-cache", s.no_cache, "ignore and do not write the binary flow cache");
}

void add_plan_flags(CLI::App* cmd, PlanArgs& p)
{
    cmd->add_option("--n", p.n, "particle counts, strictly increasing")->delimiter(',');
    cmd->add_option("--seeds", p.seeds, "replicas per N (>= 2)");
    cmd->add_option("--seed", p.seed, "base seed")->each([&p](const std::string&) { p.seed_given = true; });
}

void add_common(CLI::App* cmd, Common& c, bool needs_spec = true)
{
    if (needs_spec) cmd->add_option("spec", c.spec_path, "population spec (YAML)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", c.out, "output directory (SRP_OUTPUT_DIR overrides)");
    cmd->add_option("--workers", c.workers, "worker threads")->check(CLI::Range(1, 1024));
    cmd->add_flag("-v,--verbose", c.verbose, "print progress details");
}

SolverOptions solver_options(const SolveArgs& s, const ExperimentDefaults& d, const CLI::App* cmd)
{
    SolverOptions o;
    const auto given = [cmd](const char* flag) { return cmd->count(flag) > 0; };
    o.z_steps = given("--z-steps") ? s.z_steps : d.z_steps.value_or(s.z_steps);
    o.t_steps = given("--t-steps") ? s.t_steps : d.t_steps.value_or(s.t_steps);
    o.tol = given("--tol") ? s.tol : d.tol.value_or(s.tol);
    o.max_iter = given("--max-iter") ? s.max_iter : d.max_iter.value_or(s.max_iter);
    o.damping = given("--damping") ? s.damping : d.damping.value_or(s.damping);
    return o;
}

std::string cache_name(const PopulationSpec& spec, const SolverOptions& o)
{
    std::ostringstream os;
    os << "yc_" << std::hex << spec.hash() << std::dec << '_' << o.z_steps << 'x' << o.t_steps << ".bin";
    return os.str();
}

/// Solves y_C, reusing a cache in `dir` when one matches spec and resolution.
LimitSolution obtain_solution(const LoadedSpec& ls, const SolverOptions& o, const std::string& dir, bool use_cache,
                              bool verbose)
{
    const auto path = fs::path(dir) / cache_name(*ls.spec, o);
    if (use_cache && fs::exists(path))
    {
        auto sol = LimitSolution::load(path.string(), ls.spec);
        if (sol.y_c().z_steps() == o.z_steps && sol.y_c().t_steps() == o.t_steps && sol.residual() < o.tol)
        {
            if (verbose) std::cerr << "using cached flow " << path << '\n';
            return sol;
        }
    }
    auto sol = solve_y_c(ls.spec, o);
    if (use_cache)
    {
        fs::create_directories(dir);
        sol.save(path.string());
    }
    return sol;
}

ExperimentPlan make_plan(const LoadedSpec& ls, const PlanArgs& a, const Common& c, const SolverOptions& o)
{
    auto plan = ExperimentPlan::standard(ls.spec);
    if (ls.experiment.n_list) plan.n_list = *ls.experiment.n_list;
    if (ls.experiment.seeds) plan.seeds = *ls.experiment.seeds;
    if (ls.experiment.seed) plan.base_seed = *ls.experiment.seed;
    if (!a.n.empty()) plan.n_list = a.n;
    if (a.seeds > 0) plan.seeds = a.seeds;
    if (a.seed_given) plan.base_seed = a.seed;
    plan.workers = c.workers;
    plan.solver = o;
    plan.output_dir = output_dir(c);
    plan.validate();
    return plan;
}

void print_series(const ConvergenceReport& r)
{
    for (const auto& s : r.series)
    {
        std::cout << s.metric << ":";
        for (std::size_t i = 0; i < s.n.size(); ++i)
            std::cout << "  N=" << s.n[i] << " mean=" << s.stats[i].mean << " se=" << s.stats[i].se;
        std::cout << "  slope=" << s.fit.slope << (s.significant_decrease ? "  decreasing" : "  not decreasing") << '\n';
    }
}

bool decrease_pass(const SeriesSummary& s) { return s.significant_decrease && s.fit.slope <= -0.3; }

int cmd_validate(const Common& c)
{
    const auto ls = load_spec(c.spec_path);
    const auto& spec = *ls.spec;
    std::cout << "valid spec " << c.spec_path << "\n";
    std::cout << "horizon T = " << spec.horizon() << "\n";
    for (std::size_t k = 0; k < spec.size(); ++k)
    {
        const auto& cl = spec[k];
        const auto b = compute_bounds(cl.field);
        std::cout << "class " << k << " (" << cl.name << "): weight " << cl.weight << ", " << to_string(cl.field.kind())
                  << ", sup norm " << b.sup_norm << ", y-derivative bound " << b.y_deriv_bound << "\n";
    }
    std::cout << "C_W = " << spec.c_w() << "\n";
    std::cout << "M_W = " << spec.m_w() << "\n";
    std::cout << "position independent: " << (spec.position_independent() ? "yes" : "no") << "\n";
    return 0;
}

int cmd_solve(const Common& c, const SolveArgs& s, const CLI::App* cmd)
{
    const auto ls = load_spec(c.spec_path);
    const auto o = solver_options(s, ls.experiment, cmd);
    const auto dir = output_dir(c);
    const auto sol = obtain_solution(ls, o, dir, !s.no_cache, c.verbose);
    fs::create_directories(dir);
    std::ofstream csv(fs::path(dir) / "y_c.csv");
    sol.write_csv(csv);
    std::cout << "residual history:";
    for (double r : sol.log().residuals) std::cout << ' ' << r;
    std::cout << "\niterations " << sol.log().residuals.size() << ", final residual " << sol.residual() << "\n";
    for (const auto& note : sol.log().notes) std::cout << "note: " << note << "\n";
    const auto ode = verify_ode_form(sol);
    std::cout << "integral-form residual " << ode.max_residual << "\n";
    Json summary{{"iterations", sol.log().residuals.size()},
                 {"residuals", sol.log().residuals},
                 {"final_residual", sol.residual()},
                 {"projected_nodes", sol.log().projected_nodes},
                 {"ode_residual", ode.max_residual},
                 {"z_steps", o.z_steps},
                 {"t_steps", o.t_steps}};
    std::ofstream js(fs::path(dir) / "solve.json");
    js << summary.dump(2) << '\n';
    return 0;
}

int cmd_simulate(const Common& c, std::size_t n, std::uint64_t seed, const std::string& model, bool random_assign,
                 const SolveArgs& s, const CLI::App* cmd)
{
    const auto ls = load_spec(c.spec_path);
    const auto a = assign_population(ls.spec, n, random_assign ? AssignMode::seeded_random : AssignMode::stratified, seed);
    const auto dir = output_dir(c);
    EventLog log;
    if (model == "original")
        log = simulate(a, ls.spec->horizon(), seed);
    else
    {
        const auto o = solver_options(s, ls.experiment, cmd);
        const auto theta = model == "identity" ? std::make_shared<const FlowGrid>(o.z_steps, o.t_steps, ls.spec->horizon())
                                               : obtain_solution(ls, o, dir, !s.no_cache, c.verbose).y_c_ptr();
        log = simulate_flow_driven(a, *theta, ls.spec->horizon(), seed);
    }
    fs::create_directories(dir);
    log.save((fs::path(dir) / "events.bin").string());
    std::ofstream csv(fs::path(dir) / "events.csv");
    log.write_csv(csv);
    const auto ranks = replay_ranks(log, log.horizon());
    std::ofstream fin(fs::path(dir) / "final_positions.csv");
    fin << "particle,class,initial_position,final_position\n";
    fin.precision(17);
    for (std::size_t i = 0; i < n; ++i)
        fin << i << ',' << a.class_of[i] << ',' << a.position(i) << ','
            << static_cast<double>(ranks[i]) / static_cast<double>(n) << '\n';
    Json summary{{"n", n}, {"seed", seed}, {"model", model}, {"events", log.size()}, {"ties", log.ties()}};
    std::ofstream js(fs::path(dir) / "simulate.json");
    js << summary.dump(2) << '\n';
    std::cout << "N=" << n << " events=" << log.size() << " ties=" << log.ties() << "\n";
    return 0;
}

int cmd_sweep(const Common& c, const PlanArgs& pa, const SolveArgs& s, const std::string& model, const CLI::App* cmd)
{
    const auto ls = load_spec(c.spec_path);
    const auto o = solver_options(s, ls.experiment, cmd);
    auto plan = make_plan(ls, pa, c, o);
    bool pass = true;
    if (model == "original")
    {
        const auto sol = obtain_solution(ls, o, plan.output_dir, !s.no_cache, c.verbose);
        const auto r = convergence_sweep(plan, sol);
        print_series(r);
        for (const auto& sr : r.series) pass = pass && decrease_pass(sr);
    }
    else
    {
        const auto theta = model == "identity" ? std::make_shared<const FlowGrid>(o.z_steps, o.t_steps, ls.spec->horizon())
                                               : obtain_solution(ls, o, plan.output_dir, !s.no_cache, c.verbose).y_c_ptr();
        const auto r = flow_driven_sweep(plan, theta);
        print_series(r.report);
        std::cout << "floor sup|1 - phi_theta - theta| = " << r.theta_floor << "\n";
        for (const auto& h : plan.test_functions) pass = pass && decrease_pass(r.report.get(metric_name(h)));
        if (model == "identity" && !ls.spec->position_independent()) pass = pass && r.stays_above_floor();
    }
    std::cout << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? 0 : kCheckFailed;
}

int cmd_couple(const Common& c, const PlanArgs& pa, const SolveArgs& s, const CLI::App* cmd)
{
    const auto ls = load_spec(c.spec_path);
    const auto o = solver_options(s, ls.experiment, cmd);
    auto plan = make_plan(ls, pa, c, o);
    const auto sol = obtain_solution(ls, o, plan.output_dir, !s.no_cache, c.verbose);
    const auto r = coupling_sweep(plan, sol);
    print_series(r);
    bool pass = false;
    if (ls.spec->position_independent())
    {
        pass = true;
        for (const auto& row : r.rows) pass = pass && row.value == 0.0;
    }
    else
        pass = r.get("decoupled_fraction").significant_decrease;
    std::cout << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? 0 : kCheckFailed;
}

std::vector<TaggedParticle> parse_tagged(const std::vector<std::string>& items)
{
    std::vector<TaggedParticle> out;
    for (const auto& s : items)
    {
        const auto colon = s.find(':');
        if (colon == std::string::npos) throw CLI::ValidationError("--tagged", "expected CLASS:Y, got " + s);
        out.push_back({std::stoul(s.substr(0, colon)), std::stod(s.substr(colon + 1))});
        if (!(out.back().y >= 0.0 && out.back().y < 1.0)) throw CLI::ValidationError("--tagged", "y must lie in [0,1)");
    }
    return out;
}

int cmd_tagged(const Common& c, const PlanArgs& pa, const SolveArgs& s, const std::vector<std::string>& tagged,
               const CLI::App* cmd)
{
    const auto ls = load_spec(c.spec_path);
    const auto o = solver_options(s, ls.experiment, cmd);
    auto plan = make_plan(ls, pa, c, o);
    const auto sol = obtain_solution(ls, o, plan.output_dir, !s.no_cache, c.verbose);
    const auto r = tagged_compare(plan, sol, parse_tagged(tagged));
    bool pass = true;
    for (std::size_t l = 0; l < r.sup_diff.size(); ++l)
    {
        std::cout << "tagged " << l << ":";
        for (std::size_t i = 0; i < r.n_list.size(); ++i)
            std::cout << "  N=" << r.n_list[i] << " mean=" << r.sup_diff[l][i].mean << " se=" << r.sup_diff[l][i].se;
        std::cout << (r.decreasing(l) ? "  decreasing" : "  not decreasing") << "\n";
        if (ls.spec->max_norm() > 0.0) pass = pass && r.decreasing(l);
    }
    if (ls.spec->max_norm() == 0.0) pass = pass && r.max_excess_over_initial == 0.0;
    if (r.sup_diff.size() >= 2)
    {
        std::cout << "jump-count correlation at N=" << r.n_list.back() << ": " << r.correlation << " (se "
                  << r.correlation_se << ")\n";
        pass = pass && r.correlation_ok();
    }
    std::cout << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? 0 : kCheckFailed;
}

int cmd_latp(const Common& c, LatpValidationOptions opt, const SolveArgs& s, const CLI::App* cmd)
{
    std::vector<LatpCase> cases{{"zero", LatpIntensity::constant(0.0)},
                                {"constant_2", LatpIntensity::constant(2.0)},
                                {"one_plus_s", LatpIntensity([](double s, double) { return 1.0 + s; }, 2.0)}};
    if (!c.spec_path.empty())
    {
        const auto ls = load_spec(c.spec_path);
        const auto o = solver_options(s, ls.experiment, cmd);
        const auto sol = obtain_solution(ls, o, output_dir(c), !s.no_cache, c.verbose);
        for (std::size_t k = 0; k < ls.spec->size(); ++k)
            cases.push_back({"flow_" + (*ls.spec)[k].name + "_z0.5", tilde_w(sol.y_c_ptr(), (*ls.spec)[k].field, 0.5)});
        opt.horizon = ls.spec->horizon();
    }
    opt.workers = c.workers;
    opt.output_dir = output_dir(c);
    const auto r = latp_validation(cases, opt);
    for (const auto& cs : r.cases)
        std::cout << cs.name << ": series gap " << cs.series_gap << " (tol " << cs.series_tol << "), MC max z "
                  << cs.max_z << ", derivative violations " << cs.derivatives.max_t_violation << "/"
                  << cs.derivatives.max_s_violation << (cs.ok() ? "  PASS" : "  FAIL") << "\n";
    return r.ok() ? 0 : kCheckFailed;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Stochastic ranking process: simulation, limit flow solver and experiments"};
    app.require_subcommand(1);

    Common common;
    SolveArgs solve;
    PlanArgs plan;

    auto* validate = app.add_subcommand("validate", "check a population spec and print C_W, M_W");
    add_common(validate, common);

    auto* solve_cmd = app.add_subcommand("solve", "solve the fixed-point flow y_C; writes y_c.csv and a cache");
    add_common(solve_cmd, common);
    add_solver_flags(solve_cmd, solve);

    std::size_t sim_n = 100;
    std::uint64_t sim_seed = 1;
    std::string sim_model = "original";
    bool sim_random = false;
    auto* sim = app.add_subcommand("simulate", "run one simulation and write its event log");
    add_common(sim, common);
    add_solver_flags(sim, solve);
    sim->add_option("--n", sim_n, "particle count")->check(CLI::Range(std::size_t{1}, std::size_t{100000000}));
    sim->add_option("--seed", sim_seed, "seed");
    sim->add_option("--model", sim_model, "original, yc (flow-driven by y_C) or identity (flow-driven by the identity flow)")
        ->check(CLI::IsMember({"original", "yc", "identity"}));
    sim->add_flag("--random-assign", sim_random, "draw initial classes and positions at random instead of stratifying");

    std::string sweep_model = "original";
    auto* sweep = app.add_subcommand("sweep", "N-sweep of lattice sup-distances to the limit");
    add_common(sweep, common);
    add_solver_flags(sweep, solve);
    add_plan_flags(sweep, plan);
    sweep->add_option("--model", sweep_model, "original, yc or identity (flow-driven variants)")
        ->check(CLI::IsMember({"original", "yc", "identity"}));

    auto* couple = app.add_subcommand("couple", "decoupled fraction of original vs flow-driven copies");
    add_common(couple, common);
    add_solver_flags(couple, solve);
    add_plan_flags(couple, plan);

    std::vector<std::string> tagged{"0:0.25", "0:0.75"};
    auto* tag = app.add_subcommand("tagged", "tagged particles against their limit paths");
    add_common(tag, common);
    add_solver_flags(tag, solve);
    add_plan_flags(tag, plan);
    tag->add_option("--tagged", tagged, "tagged particles as CLASS:Y")->delimiter(',');

    LatpValidationOptions latp_opt;
    auto* latp = app.add_subcommand("latp", "point-process cross-validation: renewal solver, series, Monte Carlo");
    add_common(latp, common, false);
    add_solver_flags(latp, solve);
    latp->add_option("--spec", common.spec_path, "also check flow-induced intensities of this spec")
        ->check(CLI::ExistingFile);
    latp->add_option("--steps", latp_opt.steps, "time grid steps")->check(CLI::Range(1, 100000));
    latp->add_option("--replicas", latp_opt.replicas, "Monte Carlo paths")->check(CLI::Range(1, 100000000));
    latp->add_option("--seed", latp_opt.seed, "seed");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        const int code = app.exit(e);
        return code == 0 ? 0 : kInvalid;
    }

    try
    {
        if (*validate) return cmd_validate(common);
        if (*solve_cmd) return cmd_solve(common, solve, solve_cmd);
        if (*sim) return cmd_simulate(common, sim_n, sim_seed, sim_model, sim_random, solve, sim);
        if (*sweep) return cmd_sweep(common, plan, solve, sweep_model, sweep);
        if (*couple) return cmd_couple(common, plan, solve, couple);
        if (*tag) return cmd_tagged(common, plan, solve, tagged, tag);
        if (*latp) return cmd_latp(common, latp_opt, solve, latp);
    }
    catch (const NonConvergenceError& e)
    {
        std::cerr << "error: " << e.what() << "\nresidual history:";
        for (double r : e.residuals()) std::cerr << ' ' << r;
        std::cerr << '\n';
        return kNoConvergence;
    }
    catch (const SpecError& e)
    {
        std::cerr << "invalid spec: " << e.what() << '\n';
        return kInvalid;
    }
    catch (const CLI::ValidationError& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kInvalid;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kInvalid;
    }
    return kInvalid;
}
