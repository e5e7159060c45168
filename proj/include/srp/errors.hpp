#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace srp {

/// Invalid population specification. `path` names the offending field,
/// e.g. "classes[1].intensity.a"; `line` is 1-based or 0 when unknown.
class SpecError : public std::invalid_argument
{
public:
    SpecError(std::string path, const std::string& message, int line = 0)
        : std::invalid_argument(format(path, message, line)), path_(std::move(path)), line_(line)
    {
    }

    const std::string& path() const noexcept { return path_; }
    int line() const noexcept { return line_; }

private:
    static std::string format(const std::string& path, const std::string& message, int line)
    {
        std::string out;
        if (line > 0) out += "line " + std::to_string(line) + ": ";
        if (!path.empty()) out += path + ": ";
        return out + message;
    }

    std::string path_;
    int line_;
};

/// Picard iteration did not reach the requested residual.
class NonConvergenceError : public std::runtime_error
{
public:
    NonConvergenceError(const std::string& message, std::vector<double> residuals)
        : std::runtime_error(message), residuals_(std::move(residuals))
    {
    }

    const std::vector<double>& residuals() const noexcept { return residuals_; }

private:
    std::vector<double> residuals_;
};

/// A thinning acceptance threshold exceeded its dominating rate.
class EnvelopeBreach : public std::logic_error
{
public:
    using std::logic_error::logic_error;
};

} // namespace srp
