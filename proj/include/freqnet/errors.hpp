#pragma once

#include <stdexcept>
#include <string>

namespace freqnet {

/// Malformed case or scenario text.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Structurally invalid input (disconnected graph, bad bounds, ...).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Vector/matrix size disagreement at a module boundary.
struct DimensionError : std::invalid_argument {
    explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

/// No feasible point (reported by the dispatch oracle).
struct InfeasibleError : std::runtime_error {
    explicit InfeasibleError(const std::string& what) : std::runtime_error(what) {}
};

/// Diverging simulation or failed numerical contract.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace freqnet
