#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tcv {

// Path blew past the guard threshold; carries the first offending index.
class NumericalBlowup : public std::runtime_error {
public:
    NumericalBlowup(std::size_t path, std::size_t step, double value)
        : std::runtime_error("numerical blow-up at path " + std::to_string(path) +
                             ", step " + std::to_string(step) + " (|x| = " +
                             std::to_string(value) + ")"),
          path_index(path), step_index(step) {}
    std::size_t path_index;
    std::size_t step_index;
};

class SingularRegression : public std::runtime_error {
public:
    explicit SingularRegression(double cond, const std::string& where = "")
        : std::runtime_error("singular regression (condition number " +
                             std::to_string(cond) + ")" +
                             (where.empty() ? "" : " in " + where)),
          condition_number(cond) {}
    double condition_number;
};

class UnsupportedModel : public std::runtime_error {
public:
    explicit UnsupportedModel(const std::string& what)
        : std::runtime_error("unsupported model: " + what) {}
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace tcv
