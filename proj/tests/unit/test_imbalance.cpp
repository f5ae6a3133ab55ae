#include "doctest.h"

#include "../support/oracles.hpp"

#include "bimamsleep/error.hpp"
#include "bimamsleep/focal_loss.hpp"
#include "bimamsleep/log.hpp"
#include "bimamsleep/smote.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

using namespace bimamsleep;
namespace on = oracle;

namespace {

std::vector<std::size_t> random_labels(std::size_t n, std::size_t c, Rng& rng)
{
    std::vector<std::size_t> y(n);
    for (auto& v : y) {
        v = uniform_index(rng, c);
    }
    return y;
}

FocalConfig unit_focal(double gamma)
{
    FocalConfig cfg;
    cfg.gamma = gamma;
    return cfg;
}

// Two Gaussian blobs in d dimensions: `major` points around 0 and `minor`
// points around `offset` (overlapping so that a boundary exists).
std::pair<NdArray, std::vector<std::size_t>> blobs(std::size_t major, std::size_t minor, std::size_t d, double offset,
    Rng& rng)
{
    NdArray x({major + minor, d});
    std::vector<std::size_t> y(major + minor);
    for (std::size_t i = 0; i < major + minor; ++i) {
        const bool is_minor = i >= major;
        y[i] = is_minor ? 1 : 0;
        for (std::size_t k = 0; k < d; ++k) {
            x.at(i, k) = standard_normal(rng) + (is_minor ? offset : 0.0);
        }
    }
    return {x, y};
}

} // namespace

TEST_SUITE("focal_loss")
{
    TEST_CASE("gamma 0 with unit alpha is mean cross-entropy")
    {
        Rng rng(1);
        for (int batch = 0; batch < 100; ++batch) {
            const auto n = 1 + uniform_index(rng, 16);
            const auto logits = on::random_array({n, 5}, rng, -6.0, 6.0);
            const auto y = random_labels(n, 5, rng);
            const auto r = focal_loss(logits, y, unit_focal(0.0));
            const double ce = on::cross_entropy(logits, y);
            CHECK(std::abs(r.loss - ce) <= 1e-12 * std::max(1.0, ce));
        }
    }

    TEST_CASE("certain prediction has zero loss")
    {
        const auto logits = NdArray({1, 3}, {800.0, 0.0, 0.0});
        const std::vector<std::size_t> y{0};
        for (double gamma : {2.0, 0.0}) {
            auto cfg = unit_focal(gamma);
            cfg.alpha = {1.0, 1.0, 1.0};
            CHECK(focal_loss(logits, y, cfg).loss == 0.0);
        }
    }

    TEST_CASE("scalar oracle for logits [2, 0, 0]")
    {
        const double p = std::exp(2.0) / (std::exp(2.0) + 2.0);
        const double want = (1.0 - p) * (1.0 - p) * -std::log(p);
        FocalConfig cfg = unit_focal(2.0);
        cfg.alpha = {1.0, 1.0, 1.0};
        const auto logits = NdArray({1, 3}, {2.0, 0.0, 0.0});
        const std::vector<std::size_t> y{0};
        const auto r = focal_loss(logits, y, cfg);
        CHECK(r.loss == doctest::Approx(want).epsilon(1e-14));

        const auto f = [&](std::span<const double> v) {
            const double m = std::max({v[0], v[1], v[2]});
            const double s = std::exp(v[0] - m) + std::exp(v[1] - m) + std::exp(v[2] - m);
            const double q = std::exp(v[0] - m) / s;
            return (1.0 - q) * (1.0 - q) * -std::log(q);
        };
        CHECK(on::grad_rel_err(r.grad.values(), on::numeric_gradient(f, logits.values())) <= 1e-6);
    }

    TEST_CASE("gradient matches finite differences with class weights")
    {
        Rng rng(2);
        FocalConfig cfg;
        cfg.gamma = 2.0;
        cfg.alpha = {0.5, 2.0, 0.7, 1.3, 0.5};
        for (int trial = 0; trial < 20; ++trial) {
            const auto logits = on::random_array({6, 5}, rng, -3.0, 3.0);
            const auto y = random_labels(6, 5, rng);
            const auto r = focal_loss(logits, y, cfg);
            const auto f = [&](std::span<const double> v) {
                return on::focal(NdArray(logits.shape(), {v.begin(), v.end()}), y, cfg.gamma, cfg.alpha);
            };
            CHECK(r.loss == doctest::Approx(on::focal(logits, y, cfg.gamma, cfg.alpha)).epsilon(1e-13));
            CHECK(on::grad_rel_err(r.grad.values(), on::numeric_gradient(f, logits.values())) <= 1e-6);
        }
    }

    TEST_CASE("permutation and shift invariance, non-negativity")
    {
        Rng rng(3);
        const auto logits = on::random_array({8, 5}, rng, -4.0, 4.0);
        const auto y = random_labels(8, 5, rng);
        const auto cfg = unit_focal(2.0);
        const double base = focal_loss(logits, y, cfg).loss;
        CHECK(base >= 0.0);

        NdArray perm_logits(logits.shape());
        std::vector<std::size_t> perm_y(8);
        for (std::size_t i = 0; i < 8; ++i) {
            const auto src = (i * 3 + 1) % 8;
            perm_y[i] = y[src];
            for (std::size_t j = 0; j < 5; ++j) {
                perm_logits.at(i, j) = logits.at(src, j);
            }
        }
        CHECK(std::abs(focal_loss(perm_logits, perm_y, cfg).loss - base) <= 1e-12);

        auto shifted = logits;
        for (std::size_t i = 0; i < 8; ++i) {
            const double k = uniform(rng, -10.0, 10.0);
            for (std::size_t j = 0; j < 5; ++j) {
                shifted.at(i, j) += k;
            }
        }
        CHECK(std::abs(focal_loss(shifted, y, cfg).loss - base) <= 1e-12);
    }

    TEST_CASE("monotone decreasing in the true-class probability")
    {
        double prev = std::numeric_limits<double>::infinity();
        for (double z = -6.0; z <= 6.0; z += 0.25) {
            const auto logits = NdArray({1, 5}, {z, 0.0, 0.0, 0.0, 0.0});
            const std::vector<std::size_t> y{0};
            const double l = focal_loss(logits, y, unit_focal(2.0)).loss;
            CHECK(l < prev);
            prev = l;
        }
    }

    TEST_CASE("errors")
    {
        const std::vector<std::size_t> bad{5};
        CHECK_THROWS_AS(focal_loss(NdArray({1, 5}), bad, FocalConfig{}), ShapeError);
        FocalConfig neg;
        neg.gamma = -1.0;
        CHECK_THROWS_AS(neg.validate(5), ConfigError);
    }
}

TEST_SUITE("alpha_from_frequencies")
{
    TEST_CASE("equal counts give unit weights")
    {
        const std::vector<std::size_t> counts{7, 7, 7, 7, 7};
        for (double a : alpha_from_frequencies(counts)) {
            CHECK(a == doctest::Approx(1.0).epsilon(1e-15));
        }
    }

    TEST_CASE("largest class gets the smallest weight, mean stays 1")
    {
        const std::vector<std::size_t> counts{2, 1, 1, 1, 1};
        const auto a = alpha_from_frequencies(counts);
        CHECK(*std::min_element(a.begin(), a.end()) == a[0]);
        double mean = 0.0;
        for (double v : a) {
            mean += v;
        }
        CHECK(mean / 5.0 == doctest::Approx(1.0).epsilon(1e-15));
    }

    TEST_CASE("Sleep-EDF-20 counts order N2 < W < REM < N3 < N1")
    {
        const std::vector<std::size_t> counts{8285, 2804, 17799, 5703, 7717};
        const auto a = alpha_from_frequencies(counts);
        CHECK(a[2] < a[0]);
        CHECK(a[0] < a[4]);
        CHECK(a[4] < a[3]);
        CHECK(a[3] < a[1]);
    }

    TEST_CASE("all-zero counts rejected")
    {
        const std::vector<std::size_t> zeros(5, 0);
        CHECK_THROWS_AS(alpha_from_frequencies(zeros), ConfigError);
    }
}

TEST_SUITE("borderline_smote")
{
    TEST_CASE("balanced input is returned unchanged")
    {
        Rng data(10), rng(11);
        auto [x, y] = blobs(30, 30, 3, 1.0, data);
        SmoteConfig cfg;
        cfg.target_ratio = 1.0;
        const auto r = borderline_smote(x, y, 2, cfg, rng);
        CHECK(r.features == x);
        CHECK(r.labels == y);
        CHECK(r.origins.empty());
    }

    TEST_CASE("100 vs 20 blobs reach 100/100 inside the minority bounding box")
    {
        Rng data(12), rng(13);
        auto [x, y] = blobs(100, 20, 4, 1.5, data);
        const auto original = x;
        SmoteConfig cfg;
        cfg.target_ratio = 1.0;
        const auto r = borderline_smote(x, y, 2, cfg, rng);
        CHECK(std::count(r.labels.begin(), r.labels.end(), 0u) == 100);
        CHECK(std::count(r.labels.begin(), r.labels.end(), 1u) == 100);
        CHECK(x == original);

        std::vector<double> lo(4, 1e300), hi(4, -1e300);
        for (std::size_t i = 100; i < 120; ++i) {
            for (std::size_t k = 0; k < 4; ++k) {
                lo[k] = std::min(lo[k], x.at(i, k));
                hi[k] = std::max(hi[k], x.at(i, k));
            }
        }
        for (std::size_t i = 0; i < 120; ++i) {
            for (std::size_t k = 0; k < 4; ++k) {
                CHECK(r.features.at(i, k) == x.at(i, k));
            }
        }
        for (std::size_t s = 0; s < r.origins.size(); ++s) {
            const auto row = 120 + s;
            const auto& o = r.origins[s];
            CHECK(r.labels[row] == 1);
            CHECK(y[o.base] == 1);
            CHECK(y[o.partner] == 1);
            CHECK(o.u >= 0.0);
            CHECK(o.u <= 1.0);
            for (std::size_t k = 0; k < 4; ++k) {
                const double v = r.features.at(row, k);
                CHECK(v >= std::min(x.at(o.base, k), x.at(o.partner, k)));
                CHECK(v <= std::max(x.at(o.base, k), x.at(o.partner, k)));
                CHECK(v >= lo[k]);
                CHECK(v <= hi[k]);
            }
        }
    }

    TEST_CASE("synthetic rows start from DANGER points")
    {
        Rng data(14), rng(15);
        auto [x, y] = blobs(80, 20, 2, 1.0, data);
        SmoteConfig cfg;
        cfg.k_neighbors = 3;
        cfg.m_danger = 6;
        cfg.target_ratio = 1.0;
        const auto r = borderline_smote(x, y, 2, cfg, rng);
        // Brute-force DANGER test for every base point that was used.
        for (const auto& o : r.origins) {
            std::vector<std::pair<double, std::size_t>> d;
            for (std::size_t j = 0; j < 100; ++j) {
                if (j == o.base) {
                    continue;
                }
                const double dx = x.at(j, 0) - x.at(o.base, 0);
                const double dy = x.at(j, 1) - x.at(o.base, 1);
                d.emplace_back(dx * dx + dy * dy, j);
            }
            std::sort(d.begin(), d.end());
            std::size_t foreign = 0;
            for (std::size_t k = 0; k < 6; ++k) {
                foreign += y[d[k].second] != 1 ? 1 : 0;
            }
            CHECK(foreign >= 3);
            CHECK(foreign < 6);
        }
    }

    TEST_CASE("partial target ratio gives exact counts for every minority class")
    {
        Rng data(16), rng(17);
        NdArray x({150, 3});
        std::vector<std::size_t> y(150);
        for (std::size_t i = 0; i < 150; ++i) {
            y[i] = i < 90 ? 0 : i < 120 ? 1 : i < 140 ? 2 : 3;
            for (std::size_t k = 0; k < 3; ++k) {
                x.at(i, k) = standard_normal(data) + 0.5 * static_cast<double>(y[i]);
            }
        }
        SmoteConfig cfg;
        cfg.target_ratio = 0.5; // grow to llround(0.5 * 90) = 45
        const auto r = borderline_smote(x, y, 4, cfg, rng);
        CHECK(std::count(r.labels.begin(), r.labels.end(), 0u) == 90);
        CHECK(std::count(r.labels.begin(), r.labels.end(), 1u) == 45);
        CHECK(std::count(r.labels.begin(), r.labels.end(), 2u) == 45);
        CHECK(std::count(r.labels.begin(), r.labels.end(), 3u) == 45);
    }

    TEST_CASE("classes smaller than k+1 are skipped with a warning")
    {
        Rng data(18), rng(19);
        auto [x, y] = blobs(40, 4, 2, 1.0, data);
        ScopedWarningCapture warnings;
        SmoteConfig cfg;
        const auto r = borderline_smote(x, y, 2, cfg, rng);
        CHECK(r.labels.size() == 44);
        CHECK_FALSE(warnings.messages().empty());
    }

    TEST_CASE("deterministic given the rng seed")
    {
        Rng data(20);
        auto [x, y] = blobs(60, 15, 3, 1.0, data);
        Rng a(5), b(5);
        const auto ra = borderline_smote(x, y, 2, SmoteConfig{}, a);
        const auto rb = borderline_smote(x, y, 2, SmoteConfig{}, b);
        CHECK(ra.features == rb.features);
        CHECK(ra.labels == rb.labels);
    }

    TEST_CASE("invalid configuration")
    {
        SmoteConfig cfg;
        cfg.m_danger = 2;
        cfg.k_neighbors = 5;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
}
