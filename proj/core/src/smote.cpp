#include "bimamsleep/smote.hpp"

#include "bimamsleep/error.hpp"
#include "bimamsleep/log.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace bimamsleep {

void SmoteConfig::validate() const
{
    if (k_neighbors < 1) {
        throw ConfigError("smote.k_neighbors must be >= 1");
    }
    if (m_danger < k_neighbors) {
        throw ConfigError("smote.m_danger must be >= smote.k_neighbors");
    }
    if (!(target_ratio > 0.0) || !std::isfinite(target_ratio)) {
        throw ConfigError("smote.target_ratio must be positive and finite");
    }
}

namespace {

double squared_distance(const double* a, const double* b, std::size_t d)
{
    double s = 0.0;
#pragma omp simd reduction(+ : s)
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

// Indices of the `count` nearest candidates; ties broken by index.
std::vector<std::size_t> nearest(const std::vector<double>& dist, std::vector<std::size_t> candidates, std::size_t count)
{
    count = std::min(count, candidates.size());
    const auto closer = [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); };
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count), candidates.end(), closer);
    candidates.resize(count);
    return candidates;
}

} // namespace

SmoteResult borderline_smote(const NdArray& features, std::span<const std::size_t> labels, std::size_t num_classes,
    const SmoteConfig& cfg, Rng& rng)
{
    cfg.validate();
    if (features.rank() != 2 || features.dim(0) != labels.size()) {
        throw ShapeError("borderline_smote: features " + shape_to_string(features.shape()) + " vs "
            + std::to_string(labels.size()) + " labels");
    }
    const auto n = features.dim(0);
    const auto d = features.dim(1);
    std::vector<std::vector<std::size_t>> members(num_classes);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= num_classes) {
            throw ShapeError("borderline_smote: label " + std::to_string(labels[i]) + " out of range");
        }
        members[labels[i]].push_back(i);
    }
    std::size_t majority = 0;
    for (const auto& m : members) {
        majority = std::max(majority, m.size());
    }
    const auto target = static_cast<std::size_t>(std::llround(cfg.target_ratio * static_cast<double>(majority)));

    std::vector<double> synth_rows;
    std::vector<std::size_t> synth_labels;
    std::vector<SyntheticOrigin> origins;
    std::vector<double> dist(n);

    for (std::size_t cls = 0; cls < num_classes; ++cls) {
        const auto& own = members[cls];
        if (own.empty() || own.size() >= target) {
            continue;
        }
        if (own.size() < cfg.k_neighbors + 1) {
            warn("borderline_smote: class " + std::to_string(cls) + " has " + std::to_string(own.size())
                + " samples (< k+1 = " + std::to_string(cfg.k_neighbors + 1) + "); not oversampled");
            continue;
        }
        std::vector<std::size_t> danger;
        std::vector<std::vector<std::size_t>> partners;
        std::vector<std::vector<std::size_t>> all_partners(own.size());
        // Distances for a tile of queries at a time, so each candidate row is
        // streamed from memory once per tile rather than once per query.
        constexpr std::size_t kTile = 16;
        std::vector<double> tile_dist;
        for (std::size_t oi = 0; oi < own.size(); ++oi) {
            const auto q = own[oi];
            const auto slot = oi % kTile;
            if (slot == 0) {
                const auto rows = std::min(kTile, own.size() - oi);
                tile_dist.assign(rows * n, 0.0);
                for (std::size_t j = 0; j < n; ++j) {
                    const double* xj = features.data() + j * d;
                    for (std::size_t t = 0; t < rows; ++t) {
                        const auto qt = own[oi + t];
                        tile_dist[t * n + j] = j == qt ? 0.0 : squared_distance(features.data() + qt * d, xj, d);
                    }
                }
            }
            std::copy_n(tile_dist.data() + slot * n, n, dist.data());
            std::vector<std::size_t> others;
            others.reserve(n - 1);
            std::vector<std::size_t> same;
            same.reserve(own.size() - 1);
            for (std::size_t j = 0; j < n; ++j) {
                if (j == q) {
                    continue;
                }
                others.push_back(j);
                if (labels[j] == cls) {
                    same.push_back(j);
                }
            }
            const auto nn_all = nearest(dist, std::move(others), cfg.m_danger);
            std::size_t foreign = 0;
            for (auto j : nn_all) {
                foreign += labels[j] != cls ? 1 : 0;
            }
            all_partners[oi] = nearest(dist, std::move(same), cfg.k_neighbors);
            if (2 * foreign >= nn_all.size() && foreign < nn_all.size()) {
                danger.push_back(q);
                partners.push_back(all_partners[oi]);
            }
        }
        if (danger.empty()) {
            warn("borderline_smote: class " + std::to_string(cls)
                + " has no borderline samples; interpolating from all members");
            danger = own;
            partners = std::move(all_partners);
        }
        const auto needed = target - own.size();
        for (std::size_t s = 0; s < needed; ++s) {
            const auto slot = s % danger.size();
            const auto base = danger[slot];
            const auto& cand = partners[slot];
            const auto partner = cand[uniform_index(rng, cand.size())];
            const double u = uniform01(rng);
            const double* xb = features.data() + base * d;
            const double* xp = features.data() + partner * d;
            for (std::size_t k = 0; k < d; ++k) {
                const double v = xb[k] + u * (xp[k] - xb[k]);
                synth_rows.push_back(std::clamp(v, std::min(xb[k], xp[k]), std::max(xb[k], xp[k])));
            }
            synth_labels.push_back(cls);
            origins.push_back({base, partner, u});
        }
    }

    SmoteResult r;
    const auto total = n + synth_labels.size();
    r.features = NdArray({total, d});
    std::copy(features.values().begin(), features.values().end(), r.features.data());
    std::copy(synth_rows.begin(), synth_rows.end(), r.features.data() + n * d);
    r.labels.assign(labels.begin(), labels.end());
    r.labels.insert(r.labels.end(), synth_labels.begin(), synth_labels.end());
    r.origins = std::move(origins);
    return r;
}

} // namespace bimamsleep
