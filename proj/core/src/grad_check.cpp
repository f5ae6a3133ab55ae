#include "bimamsleep/grad_check.hpp"

#include "bimamsleep/error.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace bimamsleep {

double relative_error(double analytic, double numeric)
{
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(std::string op_name, const ScalarFunction& f, std::span<const double> x,
    std::span<const double> analytic, double tolerance, double step)
{
    if (x.size() != analytic.size()) {
        throw ShapeError("grad_check(" + op_name + "): gradient has " + std::to_string(analytic.size())
            + " entries for " + std::to_string(x.size()) + " inputs");
    }
    std::vector<double> probe(x.begin(), x.end());
    GradCheckReport report;
    report.op_name = std::move(op_name);
    report.tolerance = tolerance;
    report.coordinates = x.size();
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + step;
        const double fp = f(probe);
        probe[i] = saved - step;
        const double fm = f(probe);
        probe[i] = saved;
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = relative_error(analytic[i], numeric);
        if (!(err <= report.max_rel_err)) {
            report.max_rel_err = std::isnan(err) ? INFINITY : err;
            report.worst_index = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report.passed = report.max_rel_err <= tolerance;
    return report;
}

} // namespace bimamsleep
