#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

namespace bimamsleep {

struct GradCheckReport {
    std::string op_name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    std::size_t coordinates = 0;
    std::size_t worst_index = 0; // coordinate with the largest error
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Compares an analytic gradient of f at x with central differences over every
/// coordinate. f must be deterministic (re-seed any randomness inside it).
GradCheckReport grad_check(std::string op_name, const ScalarFunction& f, std::span<const double> x,
    std::span<const double> analytic, double tolerance, double step = 1e-5);

} // namespace bimamsleep
