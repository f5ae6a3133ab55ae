#include "bimamsleep/ssm.hpp"

#include "bimamsleep/error.hpp"

#include <cmath>
#include <string>

namespace bimamsleep {

namespace {

NdArray matmul(const NdArray& a, const NdArray& b)
{
    const auto n = a.dim(0);
    const auto k = a.dim(1);
    const auto m = b.dim(1);
    NdArray c({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            for (std::size_t j = 0; j < m; ++j) {
                c[i * m + j] += aip * b[p * m + j];
            }
        }
    }
    return c;
}

double inf_norm(const NdArray& m)
{
    const auto n = m.dim(0);
    const auto cols = m.dim(1);
    double best = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            row += std::abs(m[i * cols + j]);
        }
        best = std::max(best, row);
    }
    return best;
}

// (e^z - 1) / z, exact at z = 0.
double phi1(double z)
{
    if (std::abs(z) < 1e-5) {
        return 1.0 + z * (0.5 + z / 6.0);
    }
    return std::expm1(z) / z;
}

void require_finite(const NdArray& v, const char* what)
{
    if (!v.all_finite()) {
        throw NumericError(std::string("zoh_discretize: non-finite ") + what);
    }
}

} // namespace

NdArray matrix_exp(const NdArray& m)
{
    if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
        throw ShapeError("matrix_exp: expected a square matrix, got " + shape_to_string(m.shape()));
    }
    const auto n = m.dim(0);
    const double norm = inf_norm(m);
    int squarings = 0;
    if (norm > 0.5) {
        squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    }
    NdArray scaled = m;
    const double scale = std::ldexp(1.0, -squarings);
    for (auto& v : scaled.values()) {
        v *= scale;
    }
    // Taylor series to 18 terms: truncation error < 0.5^19 / 19! for the scaled norm.
    NdArray result({n, n});
    NdArray term({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        result[i * n + i] = 1.0;
        term[i * n + i] = 1.0;
    }
    for (int k = 1; k <= 18; ++k) {
        term = matmul(term, scaled);
        for (auto& v : term.values()) {
            v /= static_cast<double>(k);
        }
        add_inplace(result, term);
    }
    for (int s = 0; s < squarings; ++s) {
        result = matmul(result, result);
    }
    return result;
}

ZohResult zoh_discretize(const NdArray& a, const NdArray& b, double dt)
{
    if (!(dt > 0.0) || !std::isfinite(dt)) {
        throw NumericError("zoh_discretize: dt must be positive and finite, got " + std::to_string(dt));
    }
    if (b.rank() != 1) {
        throw ShapeError("zoh_discretize: B must be a vector, got " + shape_to_string(b.shape()));
    }
    const auto n = b.dim(0);
    ZohResult r;
    if (a.rank() == 1) {
        if (a.dim(0) != n) {
            throw ShapeError("zoh_discretize: diagonal A " + shape_to_string(a.shape()) + " vs B "
                + shape_to_string(b.shape()));
        }
        r.a_bar = NdArray({n});
        r.b_bar = NdArray({n});
        for (std::size_t i = 0; i < n; ++i) {
            const double z = a[i] * dt;
            r.a_bar[i] = std::exp(z);
            r.b_bar[i] = dt * phi1(z) * b[i];
        }
    } else if (a.rank() == 2 && a.dim(0) == n && a.dim(1) == n) {
        // exp([[A, B], [0, 0]] dt) = [[A_bar, B_bar], [0, 1]]
        const auto m = n + 1;
        NdArray aug({m, m});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                aug[i * m + j] = a[i * n + j] * dt;
            }
            aug[i * m + n] = b[i] * dt;
        }
        const NdArray e = matrix_exp(aug);
        r.a_bar = NdArray({n, n});
        r.b_bar = NdArray({n});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                r.a_bar[i * n + j] = e[i * m + j];
            }
            r.b_bar[i] = e[i * m + n];
        }
    } else {
        throw ShapeError("zoh_discretize: A must be [N] or [N,N] with N = " + std::to_string(n) + ", got "
            + shape_to_string(a.shape()));
    }
    require_finite(r.a_bar, "A_bar");
    require_finite(r.b_bar, "B_bar");
    return r;
}

// ---------------------------------------------------------------------------

DiscreteSsm DiscreteSsm::broadcast(std::size_t batch, std::size_t length, std::size_t channels,
    std::span<const double> a_bar, std::span<const double> b_bar, std::span<const double> c)
{
    const auto n = a_bar.size();
    if (b_bar.size() != n || c.size() != n) {
        throw ShapeError("DiscreteSsm::broadcast: a_bar, b_bar and c must share the state size");
    }
    DiscreteSsm p{NdArray({batch, length, channels, n}), NdArray({batch, length, channels, n}),
        NdArray({batch, length, n})};
    for (std::size_t r = 0; r < batch * length; ++r) {
        for (std::size_t d = 0; d < channels; ++d) {
            for (std::size_t k = 0; k < n; ++k) {
                p.a_bar[(r * channels + d) * n + k] = a_bar[k];
                p.b_bar[(r * channels + d) * n + k] = b_bar[k];
            }
        }
        for (std::size_t k = 0; k < n; ++k) {
            p.c[r * n + k] = c[k];
        }
    }
    return p;
}

NdArray ssm_scan(const NdArray& x, const DiscreteSsm& p, NdArray* states)
{
    if (x.rank() != 3 || p.a_bar.rank() != 4 || p.c.rank() != 3) {
        throw ShapeError("ssm_scan: expected x [B,L,D], a_bar [B,L,D,N], c [B,L,N]");
    }
    const auto batch = x.dim(0);
    const auto length = x.dim(1);
    const auto channels = x.dim(2);
    const auto n = p.a_bar.dim(3);
    const Shape expected{batch, length, channels, n};
    if (p.a_bar.shape() != expected || p.b_bar.shape() != expected || p.c.shape() != Shape{batch, length, n}) {
        throw ShapeError("ssm_scan: parameter shapes do not match x " + shape_to_string(x.shape()));
    }
    NdArray y(x.shape());
    if (states != nullptr) {
        *states = NdArray(expected);
    }
    std::vector<double> h(channels * n);
    for (std::size_t b = 0; b < batch; ++b) {
        std::fill(h.begin(), h.end(), 0.0);
        for (std::size_t t = 0; t < length; ++t) {
            const auto row = b * length + t;
            const double* ab = p.a_bar.data() + row * channels * n;
            const double* bb = p.b_bar.data() + row * channels * n;
            const double* c = p.c.data() + row * n;
            bool finite = true;
            for (std::size_t d = 0; d < channels; ++d) {
                const double xt = x[row * channels + d];
                double acc = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const auto i = d * n + k;
                    h[i] = ab[i] * h[i] + bb[i] * xt;
                    acc += c[k] * h[i];
                }
                finite = finite && std::isfinite(acc);
                y[row * channels + d] = acc;
            }
            if (!finite) {
                throw NumericError("ssm_scan: non-finite state at timestep " + std::to_string(t) + " (batch row "
                    + std::to_string(b) + ")");
            }
            if (states != nullptr) {
                std::copy(h.begin(), h.end(), states->data() + row * channels * n);
            }
        }
    }
    return y;
}

std::vector<double> ssm_kernel(std::span<const double> a_bar, std::span<const double> b_bar,
    std::span<const double> c, std::size_t length)
{
    const auto n = a_bar.size();
    if (b_bar.size() != n || c.size() != n) {
        throw ShapeError("ssm_kernel: a_bar, b_bar and c must share the state size");
    }
    std::vector<double> k(length, 0.0);
    std::vector<double> power(n, 1.0);
    for (std::size_t j = 0; j < length; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s += c[i] * power[i] * b_bar[i];
            power[i] *= a_bar[i];
        }
        k[j] = s;
    }
    return k;
}

std::vector<double> causal_convolve(std::span<const double> x, std::span<const double> kernel)
{
    std::vector<double> y(x.size(), 0.0);
    for (std::size_t t = 0; t < x.size(); ++t) {
        double s = 0.0;
        const auto taps = std::min(t + 1, kernel.size());
        for (std::size_t j = 0; j < taps; ++j) {
            s += kernel[j] * x[t - j];
        }
        y[t] = s;
    }
    return y;
}

// ---------------------------------------------------------------------------

NdArray selective_scan(const NdArray& xd, const NdArray& delta, const NdArray& a, const NdArray& bt,
    const NdArray& ct, SelectiveScanCache* cache)
{
    if (xd.rank() != 3 || delta.shape() != xd.shape() || a.rank() != 2 || a.dim(0) != xd.dim(2)) {
        throw ShapeError("selective_scan: inconsistent x/delta/A shapes " + shape_to_string(xd.shape()) + ", "
            + shape_to_string(delta.shape()) + ", " + shape_to_string(a.shape()));
    }
    const auto batch = xd.dim(0);
    const auto length = xd.dim(1);
    const auto channels = xd.dim(2);
    const auto n = a.dim(1);
    if (bt.shape() != Shape{batch, length, n} || ct.shape() != Shape{batch, length, n}) {
        throw ShapeError("selective_scan: B_t/C_t must be [B,L,N]");
    }
    NdArray y(xd.shape());
    if (cache != nullptr) {
        cache->h = NdArray({batch, length, channels, n});
    }
    std::vector<double> h(channels * n);
    for (std::size_t b = 0; b < batch; ++b) {
        std::fill(h.begin(), h.end(), 0.0);
        for (std::size_t t = 0; t < length; ++t) {
            const auto row = b * length + t;
            const double* bp = bt.data() + row * n;
            const double* cp = ct.data() + row * n;
            bool finite = true;
            for (std::size_t d = 0; d < channels; ++d) {
                const double dt = delta[row * channels + d];
                const double u = dt * xd[row * channels + d];
                const double* ad = a.data() + d * n;
                double* hd = h.data() + d * n;
                double acc = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    hd[k] = std::exp(dt * ad[k]) * hd[k] + u * bp[k];
                    acc += cp[k] * hd[k];
                }
                finite = finite && std::isfinite(acc);
                y[row * channels + d] = acc;
            }
            if (!finite) {
                throw NumericError("selective_scan: non-finite state at timestep " + std::to_string(t)
                    + " (batch row " + std::to_string(b) + ")");
            }
            if (cache != nullptr) {
                std::copy(h.begin(), h.end(), cache->h.data() + row * channels * n);
            }
        }
    }
    return y;
}

SelectiveScanGrads selective_scan_backward(const SelectiveScanCache& cache, const NdArray& xd, const NdArray& delta,
    const NdArray& a, const NdArray& bt, const NdArray& ct, const NdArray& dy)
{
    const auto batch = xd.dim(0);
    const auto length = xd.dim(1);
    const auto channels = xd.dim(2);
    const auto n = a.dim(1);
    SelectiveScanGrads g{NdArray(xd.shape()), NdArray(xd.shape()), NdArray(a.shape()), NdArray(bt.shape()),
        NdArray(ct.shape())};
    // carry[d,n] = dL/dh_{t} contribution flowing back from t+1: a_bar_{t+1} * g_{t+1}
    std::vector<double> carry(channels * n);
    for (std::size_t b = 0; b < batch; ++b) {
        std::fill(carry.begin(), carry.end(), 0.0);
        for (std::size_t t = length; t-- > 0;) {
            const auto row = b * length + t;
            const double* h = cache.h.data() + row * channels * n;
            const double* h_prev = t > 0 ? cache.h.data() + (row - 1) * channels * n : nullptr;
            const double* bp = bt.data() + row * n;
            const double* cp = ct.data() + row * n;
            double* dbp = g.dbt.data() + row * n;
            double* dcp = g.dct.data() + row * n;
            for (std::size_t d = 0; d < channels; ++d) {
                const double dyv = dy[row * channels + d];
                const double dt = delta[row * channels + d];
                const double xv = xd[row * channels + d];
                const double* ad = a.data() + d * n;
                double* dad = g.da.data() + d * n;
                double ddelta = 0.0;
                double dx = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const auto i = d * n + k;
                    dcp[k] += dyv * h[i];
                    const double gi = dyv * cp[k] + carry[i];
                    const double abar = std::exp(dt * ad[k]);
                    if (h_prev != nullptr) {
                        const double common = gi * h_prev[i] * abar;
                        ddelta += common * ad[k];
                        dad[k] += common * dt;
                    }
                    ddelta += gi * bp[k] * xv;
                    dbp[k] += gi * dt * xv;
                    dx += gi * dt * bp[k];
                    carry[i] = gi * abar;
                }
                g.ddelta[row * channels + d] = ddelta;
                g.dxd[row * channels + d] = dx;
            }
        }
    }
    return g;
}

} // namespace bimamsleep
