#pragma once

// YAML population specs:
//
//   horizon: 1.0
//   classes:
//     - name: slow
//       weight: 0.5
//       intensity: {kind: affine, base: 0.5, slope_y: 2.0, slope_t: 0.0}
//       density: [1.0]            # optional histogram, default uniform
//   experiment:                   # optional defaults for the sweep commands
//     n: [100, 400, 1600, 6400]
//     seeds: 20
//     seed: 1
//
// Intensity kinds and their keys:
//   constant   rate
//   affine     base, slope_y, slope_t      (base + slope_y*y + slope_t*t)
//   separable  a, b, c, d                  ((a + b*y) * (c + d*t))
//   tabulated  ny, nt, values              (values[iy*nt + it], bilinear)

#include "errors.hpp"
#include "intensity.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdint>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace srp {

struct ExperimentDefaults
{
    std::optional<std::vector<std::size_t>> n_list;
    std::optional<std::size_t> seeds;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> z_steps;
    std::optional<std::size_t> t_steps;
    std::optional<double> tol;
    std::optional<std::size_t> max_iter;
    std::optional<double> damping;
};

struct LoadedSpec
{
    std::shared_ptr<const PopulationSpec> spec;
    ExperimentDefaults experiment;
    std::string source;
};

namespace detail {

inline int line_of(const YAML::Node& node) { return node.Mark().line >= 0 ? node.Mark().line + 1 : 0; }

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline void reject_unknown(const YAML::Node& map, const std::string& path, std::set<std::string> allowed)
{
    for (const auto& kv : map)
    {
        const auto key = kv.first.as<std::string>();
        if (!allowed.count(key)) throw SpecError(join(path, key), "unknown key", line_of(kv.first));
    }
}

template <class T>
T read(const YAML::Node& map, const std::string& key, const std::string& path)
{
    const auto node = map[key];
    if (!node) throw SpecError(join(path, key), "missing", line_of(map));
    try
    {
        return node.as<T>();
    }
    catch (const YAML::Exception&)
    {
        throw SpecError(join(path, key), "has the wrong type", line_of(node));
    }
}

template <class T>
std::optional<T> read_opt(const YAML::Node& map, const std::string& key, const std::string& path)
{
    if (!map[key]) return std::nullopt;
    return read<T>(map, key, path);
}

inline IntensityField parse_intensity(const YAML::Node& node, const std::string& path, double horizon)
{
    if (!node.IsMap()) throw SpecError(path, "must be a mapping", line_of(node));
    const auto kind = read<std::string>(node, "kind", path);
    try
    {
        if (kind == "constant")
        {
            reject_unknown(node, path, {"kind", "rate"});
            return IntensityField::constant(read<double>(node, "rate", path), horizon);
        }
        if (kind == "affine")
        {
            reject_unknown(node, path, {"kind", "base", "slope_y", "slope_t"});
            return IntensityField::affine(read<double>(node, "base", path), read_opt<double>(node, "slope_y", path).value_or(0.0),
                                          read_opt<double>(node, "slope_t", path).value_or(0.0), horizon);
        }
        if (kind == "separable")
        {
            reject_unknown(node, path, {"kind", "a", "b", "c", "d"});
            return IntensityField::separable(read<double>(node, "a", path), read<double>(node, "b", path),
                                             read<double>(node, "c", path), read<double>(node, "d", path), horizon);
        }
        if (kind == "tabulated")
        {
            reject_unknown(node, path, {"kind", "ny", "nt", "values"});
            return IntensityField::tabulated(read<std::size_t>(node, "ny", path), read<std::size_t>(node, "nt", path),
                                             read<std::vector<double>>(node, "values", path), horizon);
        }
    }
    catch (const SpecError&)
    {
        throw;
    }
    catch (const std::invalid_argument& e)
    {
        throw SpecError(path, e.what(), line_of(node));
    }
    throw SpecError(path + ".kind", "unknown intensity kind '" + kind + "'", line_of(node["kind"]));
}

} // namespace detail

/// Parses and validates a spec document. `source` names it in messages.
inline LoadedSpec parse_spec(const std::string& text, const std::string& source = "<string>")
{
    YAML::Node root;
    try
    {
        root = YAML::Load(text);
    }
    catch (const YAML::ParserException& e)
    {
        throw SpecError(source, e.msg, e.mark.line + 1);
    }
    if (!root.IsMap()) throw SpecError(source, "top level must be a mapping", detail::line_of(root));
    detail::reject_unknown(root, "", {"horizon", "classes", "experiment"});
    const double horizon = detail::read<double>(root, "horizon", "");
    const auto classes_node = root["classes"];
    if (!classes_node || !classes_node.IsSequence()) throw SpecError("classes", "must be a list", detail::line_of(root));

    std::vector<PopulationClass> classes;
    std::vector<int> lines;
    for (std::size_t k = 0; k < classes_node.size(); ++k)
    {
        const auto node = classes_node[k];
        const auto path = "classes[" + std::to_string(k) + "]";
        if (!node.IsMap()) throw SpecError(path, "must be a mapping", detail::line_of(node));
        detail::reject_unknown(node, path, {"name", "weight", "intensity", "density"});
        PopulationClass c;
        c.name = detail::read_opt<std::string>(node, "name", path).value_or("class" + std::to_string(k));
        c.weight = detail::read<double>(node, "weight", path);
        if (!node["intensity"]) throw SpecError(path + ".intensity", "missing", detail::line_of(node));
        c.field = detail::parse_intensity(node["intensity"], path + ".intensity", horizon);
        if (node["density"])
        {
            const auto bins = detail::read<std::vector<double>>(node, "density", path);
            try
            {
                c.density = SpatialDensity(bins);
            }
            catch (const std::invalid_argument& e)
            {
                throw SpecError(path + ".density", e.what(), detail::line_of(node["density"]));
            }
        }
        classes.push_back(std::move(c));
        lines.push_back(detail::line_of(node));
    }

    LoadedSpec out;
    out.source = source;
    try
    {
        out.spec = std::make_shared<const PopulationSpec>(horizon, std::move(classes));
    }
    catch (const SpecError& e)
    {
        // re-anchor to the class the message refers to, if any
        int line = detail::line_of(classes_node);
        const auto& p = e.path();
        if (p.rfind("classes[", 0) == 0)
        {
            const auto k = static_cast<std::size_t>(std::stoul(p.substr(8)));
            if (k < lines.size()) line = lines[k];
        }
        else if (p == "horizon")
            line = detail::line_of(root["horizon"]);
        throw SpecError(p, std::string(e.what()).substr(p.size() + 2), line);
    }

    if (const auto ex = root["experiment"])
    {
        detail::reject_unknown(ex, "experiment", {"n", "seeds", "seed", "z_steps", "t_steps", "tol", "max_iter", "damping"});
        auto& d = out.experiment;
        d.n_list = detail::read_opt<std::vector<std::size_t>>(ex, "n", "experiment");
        d.seeds = detail::read_opt<std::size_t>(ex, "seeds", "experiment");
        d.seed = detail::read_opt<std::uint64_t>(ex, "seed", "experiment");
        d.z_steps = detail::read_opt<std::size_t>(ex, "z_steps", "experiment");
        d.t_steps = detail::read_opt<std::size_t>(ex, "t_steps", "experiment");
        d.tol = detail::read_opt<double>(ex, "tol", "experiment");
        d.max_iter = detail::read_opt<std::size_t>(ex, "max_iter", "experiment");
        d.damping = detail::read_opt<double>(ex, "damping", "experiment");
    }
    return out;
}

inline LoadedSpec load_spec(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw SpecError(path, "cannot open file");
    const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_spec(text, path);
}

} // namespace srp
