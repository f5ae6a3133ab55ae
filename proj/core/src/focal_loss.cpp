#include "bimamsleep/focal_loss.hpp"

#include "bimamsleep/error.hpp"
#include "bimamsleep/ops.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace bimamsleep {

void FocalConfig::validate(std::size_t num_classes) const
{
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
        throw ConfigError("focal.gamma must be a finite value >= 0");
    }
    if (alpha.size() != num_classes) {
        throw ConfigError("focal.alpha needs " + std::to_string(num_classes) + " entries, got "
            + std::to_string(alpha.size()));
    }
    for (double a : alpha) {
        if (!(a > 0.0) || !std::isfinite(a)) {
            throw ConfigError("focal.alpha entries must be positive and finite");
        }
    }
}

FocalResult focal_loss(const NdArray& logits, std::span<const std::size_t> labels, const FocalConfig& cfg)
{
    if (logits.rank() != 2) {
        throw ShapeError("focal_loss: logits must be [N,C], got " + shape_to_string(logits.shape()));
    }
    const auto n = logits.dim(0);
    const auto c = logits.dim(1);
    if (labels.size() != n || n == 0) {
        throw ShapeError("focal_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n)
            + " rows");
    }
    cfg.validate(c);
    const NdArray p = nn::softmax(logits);
    const double g = cfg.gamma;
    const double inv_n = 1.0 / static_cast<double>(n);

    FocalResult r{0.0, NdArray(logits.shape())};
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = labels[i];
        if (y >= c) {
            throw ShapeError("focal_loss: label " + std::to_string(y) + " out of range [0," + std::to_string(c) + ")");
        }
        const double* row = p.data() + i * c;
        const double* z = logits.data() + i * c;
        // log p_y and 1 - p_y without cancellation.
        double zmax = z[0];
        for (std::size_t j = 1; j < c; ++j) {
            zmax = std::max(zmax, z[j]);
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            denom += std::exp(z[j] - zmax);
        }
        const double log_p = (z[y] - zmax) - std::log(denom);
        const double py = row[y];
        double q = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (j != y) {
                q += row[j];
            }
        }
        const double a = cfg.alpha[y];
        const double mod = g == 0.0 ? 1.0 : std::pow(q, g);
        r.loss -= a * mod * log_p;

        // dL_i/dp_y (times p_y): gamma q^(gamma-1) p log p - q^gamma
        double dmod = 0.0;
        if (g != 0.0 && q > 0.0) {
            dmod = g * std::pow(q, g - 1.0) * py * log_p;
        }
        const double coeff = a * inv_n * (dmod - mod);
        double* gr = r.grad.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) {
            gr[j] = coeff * ((j == y ? 1.0 : 0.0) - row[j]);
        }
    }
    r.loss *= inv_n;
    return r;
}

std::vector<double> alpha_from_frequencies(std::span<const std::size_t> counts)
{
    if (counts.empty() || std::accumulate(counts.begin(), counts.end(), std::size_t{0}) == 0) {
        throw ConfigError("alpha_from_frequencies: class counts are all zero");
    }
    std::vector<double> alpha(counts.size());
    double total = 0.0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        alpha[c] = 1.0 / static_cast<double>(std::max<std::size_t>(counts[c], 1));
        total += alpha[c];
    }
    const double scale = static_cast<double>(counts.size()) / total;
    for (auto& a : alpha) {
        a *= scale;
    }
    return alpha;
}

} // namespace bimamsleep
