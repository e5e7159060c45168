#pragma once

// Event-driven simulation of the ranking process under move-to-front, the
// flow-driven variant, and the two run in lockstep on shared candidates.

#include "candidate_stream.hpp"
#include "errors.hpp"
#include "flow.hpp"
#include "intensity.hpp"
#include "order_index.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <ostream>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace srp {

enum class Model : std::uint32_t
{
    original = 0,
    flow_driven = 1,
};

/// Mutable state of one run: ranks through the order index, last jump times.
class ParticleSystemState
{
public:
    explicit ParticleSystemState(const PopulationAssignment& a)
        : index_(a.slot), last_jump_(a.size(), -1.0), n_(a.size())
    {
    }

    std::size_t size() const noexcept { return n_; }
    std::uint32_t rank_of(std::uint32_t i) const { return index_.rank_of(i); }
    double position(std::uint32_t i) const { return static_cast<double>(rank_of(i)) / static_cast<double>(n_); }
    /// Negative before the first jump.
    double last_jump(std::uint32_t i) const { return last_jump_.at(i); }
    std::vector<std::uint32_t> ranks() const { return index_.ranks(); }

    void jump(std::uint32_t i, double s)
    {
        index_.move_to_front(i);
        last_jump_[i] = s;
    }

private:
    OrderIndex index_;
    std::vector<double> last_jump_;
    std::size_t n_;
};

/// Complete jump history of one run, stored column-wise.
class EventLog
{
public:
    EventLog() = default;
    EventLog(PopulationAssignment assignment, double horizon, Model model)
        : assignment_(std::move(assignment)), horizon_(horizon), model_(model)
    {
    }

    const PopulationAssignment& assignment() const noexcept { return assignment_; }
    const PopulationSpec& spec() const { return *assignment_.spec; }
    std::uint64_t spec_hash() const { return assignment_.spec->hash(); }
    std::size_t particles() const noexcept { return assignment_.size(); }
    double horizon() const noexcept { return horizon_; }
    Model model() const noexcept { return model_; }
    std::size_t size() const noexcept { return times_.size(); }
    std::size_t ties() const noexcept { return ties_; }

    double time(std::size_t e) const { return times_[e]; }
    std::uint32_t particle(std::size_t e) const { return particles_[e]; }
    std::uint32_t pre_rank(std::size_t e) const { return pre_ranks_[e]; }
    double pre_position(std::size_t e) const
    {
        return static_cast<double>(pre_ranks_[e]) / static_cast<double>(particles());
    }
    const std::vector<double>& times() const noexcept { return times_; }
    const std::vector<std::uint32_t>& particle_column() const noexcept { return particles_; }
    const std::vector<std::uint32_t>& pre_rank_column() const noexcept { return pre_ranks_; }

    void append(double s, std::uint32_t i, std::uint32_t pre_rank)
    {
        if (!times_.empty() && s == times_.back()) ++ties_;
        times_.push_back(s);
        particles_.push_back(i);
        pre_ranks_.push_back(pre_rank);
    }

    /// Versioned columnar encoding.
    std::string to_bytes() const
    {
        std::ostringstream os(std::ios::binary);
        const auto put = [&os](const auto& v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
        const auto put_vec = [&os](const auto& v) {
            if (!v.empty()) os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof v[0]));
        };
        os.write(kMagic, 6);
        put(kVersion);
        put(static_cast<std::uint32_t>(model_));
        put(static_cast<std::uint64_t>(particles()));
        put(horizon_);
        put(spec_hash());
        put(static_cast<std::uint64_t>(ties_));
        put_vec(assignment_.slot);
        put_vec(assignment_.class_of);
        put(static_cast<std::uint64_t>(size()));
        put_vec(times_);
        put_vec(particles_);
        put_vec(pre_ranks_);
        return os.str();
    }

    void save(const std::string& path) const
    {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + path);
        const auto bytes = to_bytes();
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }

    static EventLog from_bytes(const std::string& bytes, std::shared_ptr<const PopulationSpec> spec)
    {
        std::istringstream is(bytes, std::ios::binary);
        const auto get = [&is](auto& v) {
            is.read(reinterpret_cast<char*>(&v), sizeof v);
            if (!is) throw std::runtime_error("truncated event log");
        };
        const auto get_vec = [&is](auto& v, std::size_t n) {
            v.resize(n);
            if (n > 0) is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof v[0]));
            if (!is) throw std::runtime_error("truncated event log");
        };
        char magic[6];
        is.read(magic, 6);
        if (!is || std::memcmp(magic, kMagic, 6) != 0) throw std::runtime_error("not an event log");
        std::uint32_t version = 0, model = 0;
        std::uint64_t n = 0, ties = 0, events = 0, hash = 0;
        double horizon = 0.0;
        get(version);
        if (version != kVersion) throw std::runtime_error("unsupported event log version " + std::to_string(version));
        get(model);
        get(n);
        get(horizon);
        get(hash);
        if (hash != spec->hash()) throw std::runtime_error("event log belongs to a different population spec");
        get(ties);
        PopulationAssignment a;
        a.spec = std::move(spec);
        get_vec(a.slot, n);
        get_vec(a.class_of, n);
        EventLog log(std::move(a), horizon, static_cast<Model>(model));
        get(events);
        get_vec(log.times_, events);
        get_vec(log.particles_, events);
        get_vec(log.pre_ranks_, events);
        log.ties_ = ties;
        return log;
    }

    static EventLog load(const std::string& path, std::shared_ptr<const PopulationSpec> spec)
    {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("cannot read " + path);
        std::ostringstream buf;
        buf << is.rdbuf();
        return from_bytes(buf.str(), std::move(spec));
    }

    /// Debug dump: time, particle, pre-jump position.
    void write_csv(std::ostream& os) const
    {
        os << "time,particle,pre_position\n";
        os.precision(17);
        for (std::size_t e = 0; e < size(); ++e) os << times_[e] << ',' << particles_[e] << ',' << pre_position(e) << '\n';
    }

private:
    static constexpr char kMagic[6] = {'S', 'R', 'P', 'L', 'O', 'G'};
    static constexpr std::uint32_t kVersion = 1;

    PopulationAssignment assignment_;
    double horizon_ = 0.0;
    Model model_ = Model::original;
    std::vector<double> times_;
    std::vector<std::uint32_t> particles_;
    std::vector<std::uint32_t> pre_ranks_;
    std::size_t ties_ = 0;
};

/// sigma[i]: first candidate time accepted by exactly one of the two models,
/// +inf when the jump sequences agree on [0,T].
struct CouplingRecord
{
    std::vector<double> sigma;

    std::size_t decoupled() const
    {
        std::size_t c = 0;
        for (double s : sigma)
            if (s != std::numeric_limits<double>::infinity()) ++c;
        return c;
    }
    double decoupled_fraction() const
    {
        return sigma.empty() ? 0.0 : static_cast<double>(decoupled()) / static_cast<double>(sigma.size());
    }
};

struct CoupledRun
{
    EventLog original;
    EventLog flow_driven;
    CouplingRecord coupling;
};

namespace detail {

/// Merges the per-particle candidate streams in time order; equal times go to
/// the lower particle index.
class CandidateQueue
{
public:
    CandidateQueue(const PopulationAssignment& a, double horizon, std::uint64_t seed) : horizon_(horizon)
    {
        streams_.reserve(a.size());
        for (std::size_t i = 0; i < a.size(); ++i)
        {
            streams_.emplace_back(seed, i, a.field(i).sup_norm());
            if (streams_.back().time() <= horizon_) heap_.emplace(streams_.back().time(), static_cast<std::uint32_t>(i));
        }
    }

    bool empty() const noexcept { return heap_.empty(); }
    std::pair<double, std::uint32_t> top() const { return heap_.top(); }
    double mark(std::uint32_t i) const { return streams_[i].mark(); }
    double envelope(std::uint32_t i) const { return streams_[i].envelope(); }

    void pop_and_advance()
    {
        const auto i = heap_.top().second;
        heap_.pop();
        streams_[i].advance();
        if (streams_[i].time() <= horizon_) heap_.emplace(streams_[i].time(), i);
    }

private:
    using Entry = std::pair<double, std::uint32_t>;
    double horizon_;
    std::vector<CandidateStream> streams_;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> heap_;
};

inline double checked(double threshold, double envelope, std::uint32_t i, double s)
{
    if (threshold > envelope * (1.0 + 1e-12) + 1e-300)
        throw EnvelopeBreach("particle " + std::to_string(i) + " at t=" + std::to_string(s) + ": rate " +
                             std::to_string(threshold) + " exceeds envelope " + std::to_string(envelope));
    return threshold;
}

inline void check_horizon(const PopulationAssignment& a, double horizon)
{
    if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
    if (horizon > a.spec->horizon() * (1 + 1e-12))
        throw std::invalid_argument("simulation horizon exceeds the intensity horizon");
}

inline BoundaryPoint reset_point(const PopulationAssignment& a, const ParticleSystemState& st, std::uint32_t i)
{
    const double last = st.last_jump(i);
    return last < 0.0 ? BoundaryPoint::initial(a.position(i)) : BoundaryPoint::boundary(last);
}

} // namespace detail

/// Exact simulation by thinning: candidate (s, xi) of particle i is accepted
/// iff xi < w_i(Y_i(s-), s).
inline EventLog simulate(const PopulationAssignment& a, double horizon, std::uint64_t seed)
{
    detail::check_horizon(a, horizon);
    const auto n = static_cast<double>(a.size());
    ParticleSystemState st(a);
    EventLog log(a, horizon, Model::original);
    detail::CandidateQueue q(a, horizon, seed);
    while (!q.empty())
    {
        const auto [s, i] = q.top();
        const auto rank = st.rank_of(i);
        const double w = detail::checked(a.field(i).eval(static_cast<double>(rank) / n, s), q.envelope(i), i, s);
        if (q.mark(i) < w)
        {
            log.append(s, i, rank);
            st.jump(i, s);
        }
        q.pop_and_advance();
    }
    return log;
}

/// As simulate, but the hazard is read along the flow from the particle's last
/// reset point: xi < w_i(theta(gamma_i(s-), s), s). theta is continuous in t,
/// so evaluating it at s equals the left limit.
inline EventLog simulate_flow_driven(const PopulationAssignment& a, const FlowGrid& theta, double horizon,
                                     std::uint64_t seed)
{
    detail::check_horizon(a, horizon);
    if (horizon > theta.horizon() * (1 + 1e-12)) throw std::invalid_argument("flow grid shorter than the horizon");
    ParticleSystemState st(a);
    EventLog log(a, horizon, Model::flow_driven);
    detail::CandidateQueue q(a, horizon, seed);
    while (!q.empty())
    {
        const auto [s, i] = q.top();
        const double y = theta.at(detail::reset_point(a, st, i), s);
        const double w = detail::checked(a.field(i).eval(y, s), q.envelope(i), i, s);
        if (q.mark(i) < w)
        {
            log.append(s, i, st.rank_of(i));
            st.jump(i, s);
        }
        q.pop_and_advance();
    }
    return log;
}

/// Both models on the same candidates.
inline CoupledRun simulate_coupled(const PopulationAssignment& a, const FlowGrid& theta, double horizon,
                                   std::uint64_t seed)
{
    detail::check_horizon(a, horizon);
    if (horizon > theta.horizon() * (1 + 1e-12)) throw std::invalid_argument("flow grid shorter than the horizon");
    const auto n = static_cast<double>(a.size());
    ParticleSystemState orig(a);
    ParticleSystemState driven(a);
    CoupledRun out{EventLog(a, horizon, Model::original), EventLog(a, horizon, Model::flow_driven),
                   CouplingRecord{std::vector<double>(a.size(), std::numeric_limits<double>::infinity())}};
    detail::CandidateQueue q(a, horizon, seed);
    while (!q.empty())
    {
        const auto [s, i] = q.top();
        const auto& w = a.field(i);
        const double xi = q.mark(i);
        const auto rank_o = orig.rank_of(i);
        const double w_o = detail::checked(w.eval(static_cast<double>(rank_o) / n, s), q.envelope(i), i, s);
        const double w_f = detail::checked(w.eval(theta.at(detail::reset_point(a, driven, i), s), s), q.envelope(i), i, s);
        const bool acc_o = xi < w_o;
        const bool acc_f = xi < w_f;
        if (acc_o)
        {
            out.original.append(s, i, rank_o);
            orig.jump(i, s);
        }
        if (acc_f)
        {
            out.flow_driven.append(s, i, driven.rank_of(i));
            driven.jump(i, s);
        }
        if (acc_o != acc_f && out.coupling.sigma[i] == std::numeric_limits<double>::infinity())
            out.coupling.sigma[i] = s;
        q.pop_and_advance();
    }
    return out;
}

} // namespace srp
