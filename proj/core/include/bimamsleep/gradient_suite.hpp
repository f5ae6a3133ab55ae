#pragma once

#include "bimamsleep/grad_check.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace bimamsleep {

struct GradientSuiteOptions {
    std::uint64_t seed = 20240601;
    double tolerance = 1e-4;
    double step = 1e-5;
    bool include_model = true; // end-to-end toy model, one report per parameter tensor
};

/// Finite-difference checks for every differentiable primitive, the AFM and
/// BiMamba blocks, the focal loss, and the toy model's loss with respect to
/// each parameter tensor. Each report covers all coordinates of one input.
std::vector<GradCheckReport> run_gradient_suite(const GradientSuiteOptions& options = {},
    const std::function<void(const GradCheckReport&)>& on_report = {});

} // namespace bimamsleep
