#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library's kernels: every oracle is a
// direct transcription of the defining formula with plain loops.

#include "bimamsleep/metrics.hpp"
#include "bimamsleep/random.hpp"
#include "bimamsleep/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace oracle {

using bimamsleep::NdArray;
using bimamsleep::Rng;
using bimamsleep::Shape;

inline NdArray random_array(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    NdArray a(shape);
    for (auto& v : a.values()) {
        v = bimamsleep::uniform(rng, lo, hi);
    }
    return a;
}

// |a - b| / max(|a|, |b|, floor), maximised over elements.
inline double max_rel_diff(std::span<const double> a, std::span<const double> b, double floor = 1e-12)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

inline double max_rel_diff(const NdArray& a, const NdArray& b, double floor = 1e-12)
{
    return max_rel_diff(a.values(), b.values(), floor);
}

// Central differences of f at x over every coordinate.
inline std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double h = 1e-5)
{
    std::vector<double> xs(x.begin(), x.end());
    std::vector<double> g(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double keep = xs[i];
        xs[i] = keep + h;
        const double up = f(xs);
        xs[i] = keep - h;
        const double down = f(xs);
        xs[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Relative error with the 1e-8 floor used by the gradient contract.
inline double grad_rel_err(std::span<const double> analytic, std::span<const double> numeric)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
    }
    return worst;
}

inline double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

// ---------------------------------------------------------------------------
// Layer oracles.

inline NdArray conv1d(const NdArray& x, const NdArray& w, const NdArray& b, std::size_t stride, std::size_t pad)
{
    const auto B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
    const auto Cout = w.dim(0), K = w.dim(2);
    const auto Lout = (L + 2 * pad - K) / stride + 1;
    NdArray y({B, Cout, Lout});
    for (std::size_t n = 0; n < B; ++n) {
        for (std::size_t o = 0; o < Cout; ++o) {
            for (std::size_t t = 0; t < Lout; ++t) {
                double s = b.empty() ? 0.0 : b[o];
                for (std::size_t c = 0; c < Cin; ++c) {
                    for (std::size_t k = 0; k < K; ++k) {
                        const auto pos = static_cast<long>(t * stride + k) - static_cast<long>(pad);
                        if (pos >= 0 && pos < static_cast<long>(L)) {
                            s += w.at(o, c, k) * x.at(n, c, static_cast<std::size_t>(pos));
                        }
                    }
                }
                y.at(n, o, t) = s;
            }
        }
    }
    return y;
}

inline NdArray maxpool1d(const NdArray& x, std::size_t window, std::size_t stride)
{
    const auto B = x.dim(0), C = x.dim(1), L = x.dim(2);
    const auto Lout = (L - window) / stride + 1;
    NdArray y({B, C, Lout});
    for (std::size_t n = 0; n < B; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t t = 0; t < Lout; ++t) {
                double m = x.at(n, c, t * stride);
                for (std::size_t k = 1; k < window; ++k) {
                    m = std::max(m, x.at(n, c, t * stride + k));
                }
                y.at(n, c, t) = m;
            }
        }
    }
    return y;
}

// x [rows, Din] (any leading shape flattened), w [Dout, Din].
inline NdArray linear(const NdArray& x, const NdArray& w, const NdArray& b)
{
    const auto din = w.dim(1), dout = w.dim(0);
    const auto rows = x.size() / din;
    Shape out_shape = x.shape();
    out_shape.back() = dout;
    NdArray y(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < dout; ++o) {
            double s = b.empty() ? 0.0 : b[o];
            for (std::size_t i = 0; i < din; ++i) {
                s += w.at(o, i) * x[r * din + i];
            }
            y[r * dout + o] = s;
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// Linear-system oracles.

// One RK4 integration of h' = A h + B u over [0, dt] with u held constant,
// diagonal A, split into `substeps` pieces.
inline std::vector<double> rk4_diag(std::vector<double> h, std::span<const double> a, std::span<const double> b,
    double u, double dt, std::size_t substeps)
{
    const double step = dt / static_cast<double>(substeps);
    const auto n = h.size();
    std::vector<double> k1(n), k2(n), k3(n), k4(n);
    for (std::size_t s = 0; s < substeps; ++s) {
        for (std::size_t i = 0; i < n; ++i) {
            k1[i] = a[i] * h[i] + b[i] * u;
            k2[i] = a[i] * (h[i] + 0.5 * step * k1[i]) + b[i] * u;
            k3[i] = a[i] * (h[i] + 0.5 * step * k2[i]) + b[i] * u;
            k4[i] = a[i] * (h[i] + step * k3[i]) + b[i] * u;
            h[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    return h;
}

// y_t = sum_{j<=t} (sum_n c_n a_n^j b_n) x_{t-j}, computed with explicit powers.
inline std::vector<double> static_ssm_convolution(std::span<const double> a_bar, std::span<const double> b_bar,
    std::span<const double> c, std::span<const double> x)
{
    const auto L = x.size();
    std::vector<double> kernel(L, 0.0);
    for (std::size_t j = 0; j < L; ++j) {
        for (std::size_t n = 0; n < a_bar.size(); ++n) {
            kernel[j] += c[n] * std::pow(a_bar[n], static_cast<double>(j)) * b_bar[n];
        }
    }
    std::vector<double> y(L, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t j = 0; j <= t; ++j) {
            y[t] += kernel[j] * x[t - j];
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// Loss oracles.

// Mean softmax cross-entropy via log-sum-exp, row by row.
inline double cross_entropy(const NdArray& logits, std::span<const std::size_t> labels)
{
    const auto n = logits.dim(0), c = logits.dim(1);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double m = logits.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) {
            m = std::max(m, logits.at(i, j));
        }
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            z += std::exp(logits.at(i, j) - m);
        }
        total += -(logits.at(i, labels[i]) - m - std::log(z));
    }
    return total / static_cast<double>(n);
}

inline double focal(const NdArray& logits, std::span<const std::size_t> labels, double gamma,
    std::span<const double> alpha)
{
    const auto n = logits.dim(0), c = logits.dim(1);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double m = logits.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) {
            m = std::max(m, logits.at(i, j));
        }
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            z += std::exp(logits.at(i, j) - m);
        }
        const double logp = logits.at(i, labels[i]) - m - std::log(z);
        const double p = std::exp(logp);
        total += -alpha[labels[i]] * std::pow(1.0 - p, gamma) * logp;
    }
    return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Metric oracles computed straight from label vectors (no confusion matrix).

struct BruteMetrics {
    double acc = 0.0;
    std::vector<double> f1;
    double mf1 = 0.0;
    double kappa = 0.0;
    double mgm = 0.0;
};

inline BruteMetrics brute_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> pred,
    std::size_t classes)
{
    BruteMetrics r;
    const double n = static_cast<double>(truth.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        correct += truth[i] == pred[i] ? 1 : 0;
    }
    r.acc = static_cast<double>(correct) / n;

    double pe = 0.0;
    double log_recall_sum = 0.0;
    bool zero_recall = false;
    for (std::size_t c = 0; c < classes; ++c) {
        double tp = 0.0, fp = 0.0, fn = 0.0, actual = 0.0, predicted = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const bool t = truth[i] == c;
            const bool p = pred[i] == c;
            tp += (t && p) ? 1.0 : 0.0;
            fp += (!t && p) ? 1.0 : 0.0;
            fn += (t && !p) ? 1.0 : 0.0;
            actual += t ? 1.0 : 0.0;
            predicted += p ? 1.0 : 0.0;
        }
        const double precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
        const double recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
        r.f1.push_back(precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0);
        pe += (actual / n) * (predicted / n);
        if (recall == 0.0) {
            zero_recall = true;
        } else {
            log_recall_sum += std::log(recall);
        }
    }
    for (double f : r.f1) {
        r.mf1 += f;
    }
    r.mf1 /= static_cast<double>(classes);
    r.kappa = pe == 1.0 ? 0.0 : (r.acc - pe) / (1.0 - pe);
    r.mgm = zero_recall ? 0.0 : std::exp(log_recall_sum / static_cast<double>(classes));
    return r;
}

} // namespace oracle
