#include "bimamsleep/ops.hpp"

#include "bimamsleep/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace bimamsleep::nn {

namespace {

constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;

void require_rank(const NdArray& a, std::size_t rank, const char* op, const char* what)
{
    if (a.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank)
            + ", got " + shape_to_string(a.shape()));
    }
}

// Copies each [Cin, L] row of sample b into a zero-padded buffer.
std::vector<double> pad_rows(const NdArray& x, std::size_t padding)
{
    const auto batch = x.dim(0);
    const auto channels = x.dim(1);
    const auto length = x.dim(2);
    const auto padded = length + 2 * padding;
    std::vector<double> out(batch * channels * padded, 0.0);
    for (std::size_t r = 0; r < batch * channels; ++r) {
        std::copy_n(x.data() + r * length, length, out.data() + r * padded + padding);
    }
    return out;
}

double sigmoid(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

// ---------------------------------------------------------------------------

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
    std::size_t padding)
{
    if (stride == 0) {
        throw ShapeError("conv1d: stride must be >= 1");
    }
    if (kernel == 0 || kernel > length + 2 * padding) {
        throw ShapeError("conv1d: kernel " + std::to_string(kernel) + " exceeds padded length "
            + std::to_string(length + 2 * padding));
    }
    return (length + 2 * padding - kernel) / stride + 1;
}

NdArray conv1d(const NdArray& x, const NdArray& w, const NdArray& b, std::size_t stride,
    std::size_t padding)
{
    require_rank(x, 3, "conv1d", "x");
    require_rank(w, 3, "conv1d", "w");
    const auto batch = x.dim(0);
    const auto cin = x.dim(1);
    const auto length = x.dim(2);
    const auto cout = w.dim(0);
    const auto kernel = w.dim(2);
    if (w.dim(1) != cin) {
        throw ShapeError("conv1d: weight " + shape_to_string(w.shape()) + " incompatible with input "
            + shape_to_string(x.shape()));
    }
    if (!b.empty() && (b.rank() != 1 || b.dim(0) != cout)) {
        throw ShapeError("conv1d: bias shape " + shape_to_string(b.shape()));
    }
    const auto lout = conv1d_output_length(length, kernel, stride, padding);
    const auto padded = length + 2 * padding;
    const auto xp = pad_rows(x, padding);

    NdArray y({batch, cout, lout});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t co = 0; co < cout; ++co) {
            double* yrow = y.data() + (n * cout + co) * lout;
            const double bias = b.empty() ? 0.0 : b[co];
            std::fill_n(yrow, lout, bias);
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* wk = w.data() + (co * cin + ci) * kernel;
                const double* xrow = xp.data() + (n * cin + ci) * padded;
                if (stride == 1) {
                    // Tap-major so the inner loop runs over contiguous outputs.
                    for (std::size_t k = 0; k < kernel; ++k) {
                        const double wv = wk[k];
                        const double* xs = xrow + k;
                        for (std::size_t t = 0; t < lout; ++t) {
                            yrow[t] += wv * xs[t];
                        }
                    }
                    continue;
                }
                for (std::size_t t = 0; t < lout; ++t) {
                    const double* xs = xrow + t * stride;
                    double acc = 0.0;
#pragma omp simd reduction(+ : acc)
                    for (std::size_t k = 0; k < kernel; ++k) {
                        acc += wk[k] * xs[k];
                    }
                    yrow[t] += acc;
                }
            }
        }
    }
    return y;
}

Conv1dGrads conv1d_backward(const NdArray& x, const NdArray& w, bool has_bias, const NdArray& dy,
    std::size_t stride, std::size_t padding, bool need_dx)
{
    const auto batch = x.dim(0);
    const auto cin = x.dim(1);
    const auto length = x.dim(2);
    const auto cout = w.dim(0);
    const auto kernel = w.dim(2);
    const auto lout = conv1d_output_length(length, kernel, stride, padding);
    if (dy.shape() != Shape{batch, cout, lout}) {
        throw ShapeError("conv1d_backward: dy shape " + shape_to_string(dy.shape()));
    }
    const auto padded = length + 2 * padding;
    const auto xp = pad_rows(x, padding);

    Conv1dGrads g;
    g.dw = NdArray(w.shape());
    if (has_bias) {
        g.db = NdArray({cout});
    }
    std::vector<double> dxp;
    if (need_dx) {
        dxp.assign(batch * cin * padded, 0.0);
    }
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t co = 0; co < cout; ++co) {
            const double* grow = dy.data() + (n * cout + co) * lout;
            if (has_bias) {
                double s = 0.0;
                for (std::size_t t = 0; t < lout; ++t) {
                    s += grow[t];
                }
                g.db[co] += s;
            }
            for (std::size_t ci = 0; ci < cin; ++ci) {
                double* dwk = g.dw.data() + (co * cin + ci) * kernel;
                const double* wk = w.data() + (co * cin + ci) * kernel;
                const double* xrow = xp.data() + (n * cin + ci) * padded;
                double* dxrow = need_dx ? dxp.data() + (n * cin + ci) * padded : nullptr;
                if (stride == 1) {
                    for (std::size_t k = 0; k < kernel; ++k) {
                        const double* xs = xrow + k;
                        double acc = 0.0;
#pragma omp simd reduction(+ : acc)
                        for (std::size_t t = 0; t < lout; ++t) {
                            acc += grow[t] * xs[t];
                        }
                        dwk[k] += acc;
                        if (dxrow != nullptr) {
                            const double wv = wk[k];
                            double* dxs = dxrow + k;
                            for (std::size_t t = 0; t < lout; ++t) {
                                dxs[t] += wv * grow[t];
                            }
                        }
                    }
                    continue;
                }
                for (std::size_t t = 0; t < lout; ++t) {
                    const double gt = grow[t];
                    if (gt == 0.0) {
                        continue;
                    }
                    const double* xs = xrow + t * stride;
                    for (std::size_t k = 0; k < kernel; ++k) {
                        dwk[k] += gt * xs[k];
                    }
                    if (dxrow != nullptr) {
                        double* dxs = dxrow + t * stride;
                        for (std::size_t k = 0; k < kernel; ++k) {
                            dxs[k] += gt * wk[k];
                        }
                    }
                }
            }
        }
    }
    if (need_dx) {
        g.dx = NdArray(x.shape());
        for (std::size_t r = 0; r < batch * cin; ++r) {
            std::copy_n(dxp.data() + r * padded + padding, length, g.dx.data() + r * length);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------

BatchNormState::BatchNormState(std::size_t channels)
    : running_mean({channels}, 0.0)
    , running_var({channels}, 1.0)
{
}

NdArray batchnorm1d(const NdArray& x, const NdArray& gamma, const NdArray& beta,
    BatchNormState& state, Mode mode, BatchNormCache* cache)
{
    require_rank(x, 3, "batchnorm1d", "x");
    const auto batch = x.dim(0);
    const auto channels = x.dim(1);
    const auto length = x.dim(2);
    if (gamma.size() != channels || beta.size() != channels
        || state.running_mean.size() != channels || state.running_var.size() != channels) {
        throw ShapeError("batchnorm1d: parameter size does not match " + std::to_string(channels)
            + " channels");
    }
    const auto count = batch * length;
    if (mode == Mode::Train && count < 2) {
        throw ShapeError("batchnorm1d: training needs at least 2 values per channel, got "
            + std::to_string(count));
    }

    std::vector<double> inv_std(channels);
    std::vector<double> mean(channels);
    if (mode == Mode::Train) {
        for (std::size_t c = 0; c < channels; ++c) {
            double s = 0.0;
            for (std::size_t n = 0; n < batch; ++n) {
                const double* row = x.data() + (n * channels + c) * length;
                for (std::size_t t = 0; t < length; ++t) {
                    s += row[t];
                }
            }
            const double mu = s / static_cast<double>(count);
            double ss = 0.0;
            for (std::size_t n = 0; n < batch; ++n) {
                const double* row = x.data() + (n * channels + c) * length;
                for (std::size_t t = 0; t < length; ++t) {
                    const double d = row[t] - mu;
                    ss += d * d;
                }
            }
            const double var = ss / static_cast<double>(count);
            mean[c] = mu;
            inv_std[c] = 1.0 / std::sqrt(var + state.eps);
            const double unbiased = ss / static_cast<double>(count - 1);
            state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
            state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
        }
    } else {
        for (std::size_t c = 0; c < channels; ++c) {
            mean[c] = state.running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
        }
    }

    NdArray y(x.shape());
    NdArray x_hat;
    if (cache != nullptr) {
        x_hat = NdArray(x.shape());
    }
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t off = (n * channels + c) * length;
            for (std::size_t t = 0; t < length; ++t) {
                const double h = (x[off + t] - mean[c]) * inv_std[c];
                if (cache != nullptr) {
                    x_hat[off + t] = h;
                }
                y[off + t] = gamma[c] * h + beta[c];
            }
        }
    }
    if (cache != nullptr) {
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_std);
        cache->mode = mode;
    }
    return y;
}

BatchNormGrads batchnorm1d_backward(const BatchNormCache& cache, const NdArray& gamma,
    const NdArray& dy)
{
    const auto& xh = cache.x_hat;
    if (dy.shape() != xh.shape()) {
        throw ShapeError("batchnorm1d_backward: dy shape " + shape_to_string(dy.shape()));
    }
    const auto batch = xh.dim(0);
    const auto channels = xh.dim(1);
    const auto length = xh.dim(2);
    const double count = static_cast<double>(batch * length);

    BatchNormGrads g{NdArray(xh.shape()), NdArray({channels}), NdArray({channels})};
    for (std::size_t c = 0; c < channels; ++c) {
        double sum_dy = 0.0;
        double sum_dy_xh = 0.0;
        for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t off = (n * channels + c) * length;
            for (std::size_t t = 0; t < length; ++t) {
                sum_dy += dy[off + t];
                sum_dy_xh += dy[off + t] * xh[off + t];
            }
        }
        g.dbeta[c] = sum_dy;
        g.dgamma[c] = sum_dy_xh;
        const double scale = gamma[c] * cache.inv_std[c];
        for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t off = (n * channels + c) * length;
            for (std::size_t t = 0; t < length; ++t) {
                if (cache.mode == Mode::Train) {
                    g.dx[off + t] = scale * (dy[off + t] - sum_dy / count - xh[off + t] * sum_dy_xh / count);
                } else {
                    g.dx[off + t] = scale * dy[off + t];
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------

const char* activation_name(Activation kind)
{
    switch (kind) {
    case Activation::GELU:
        return "gelu";
    case Activation::SiLU:
        return "silu";
    case Activation::ReLU:
        return "relu";
    case Activation::Sigmoid:
        return "sigmoid";
    case Activation::Softplus:
        return "softplus";
    }
    return "?";
}

double activate(Activation kind, double x)
{
    switch (kind) {
    case Activation::GELU:
        return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    case Activation::SiLU:
        return x * sigmoid(x);
    case Activation::ReLU:
        return x > 0.0 ? x : 0.0;
    case Activation::Sigmoid:
        return sigmoid(x);
    case Activation::Softplus:
        return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    }
    return x;
}

double activate_derivative(Activation kind, double x)
{
    switch (kind) {
    case Activation::GELU: {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi * kInvSqrt2;
        return cdf + x * pdf;
    }
    case Activation::SiLU: {
        const double s = sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
    }
    case Activation::ReLU:
        return x > 0.0 ? 1.0 : 0.0;
    case Activation::Sigmoid: {
        const double s = sigmoid(x);
        return s * (1.0 - s);
    }
    case Activation::Softplus:
        return sigmoid(x);
    }
    return 1.0;
}

NdArray activation(const NdArray& x, Activation kind)
{
    NdArray y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = activate(kind, x[i]);
    }
    return y;
}

NdArray activation_backward(const NdArray& x, const NdArray& dy, Activation kind)
{
    if (x.shape() != dy.shape()) {
        throw ShapeError("activation_backward: shape mismatch");
    }
    NdArray dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        dx[i] = dy[i] * activate_derivative(kind, x[i]);
    }
    return dx;
}

// ---------------------------------------------------------------------------

std::size_t maxpool1d_output_length(std::size_t length, std::size_t window, std::size_t stride)
{
    if (window == 0 || stride == 0) {
        throw ShapeError("maxpool1d: window and stride must be >= 1");
    }
    if (window > length) {
        throw ShapeError("maxpool1d: window " + std::to_string(window) + " exceeds length "
            + std::to_string(length));
    }
    return (length - window) / stride + 1;
}

MaxPoolResult maxpool1d(const NdArray& x, std::size_t window, std::size_t stride)
{
    require_rank(x, 3, "maxpool1d", "x");
    const auto rows = x.dim(0) * x.dim(1);
    const auto length = x.dim(2);
    const auto lout = maxpool1d_output_length(length, window, stride);
    MaxPoolResult r{NdArray({x.dim(0), x.dim(1), lout}), std::vector<std::size_t>(rows * lout)};
    for (std::size_t row = 0; row < rows; ++row) {
        const std::size_t in_off = row * length;
        for (std::size_t t = 0; t < lout; ++t) {
            std::size_t best = in_off + t * stride;
            for (std::size_t k = 1; k < window; ++k) {
                const std::size_t idx = in_off + t * stride + k;
                if (x[idx] > x[best]) {
                    best = idx;
                }
            }
            r.out[row * lout + t] = x[best];
            r.argmax[row * lout + t] = best;
        }
    }
    return r;
}

NdArray maxpool1d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
    const NdArray& dy)
{
    if (argmax.size() != dy.size()) {
        throw ShapeError("maxpool1d_backward: argmax/dy size mismatch");
    }
    NdArray dx(input_shape);
    for (std::size_t i = 0; i < dy.size(); ++i) {
        dx[argmax[i]] += dy[i];
    }
    return dx;
}

// ---------------------------------------------------------------------------

NdArray linear(const NdArray& x, const NdArray& w, const NdArray& b)
{
    require_rank(w, 2, "linear", "w");
    if (x.rank() == 0) {
        throw ShapeError("linear: input must have rank >= 1");
    }
    const auto din = w.dim(1);
    const auto dout = w.dim(0);
    if (x.shape().back() != din) {
        throw ShapeError("linear: input " + shape_to_string(x.shape()) + " incompatible with weight "
            + shape_to_string(w.shape()));
    }
    if (!b.empty() && b.size() != dout) {
        throw ShapeError("linear: bias shape " + shape_to_string(b.shape()));
    }
    const auto rows = x.size() / din;
    Shape out_shape = x.shape();
    out_shape.back() = dout;
    NdArray y(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * din;
        double* yr = y.data() + r * dout;
        for (std::size_t o = 0; o < dout; ++o) {
            const double* wo = w.data() + o * din;
            double acc = 0.0;
            for (std::size_t i = 0; i < din; ++i) {
                acc += wo[i] * xr[i];
            }
            yr[o] = acc + (b.empty() ? 0.0 : b[o]);
        }
    }
    return y;
}

LinearGrads linear_backward(const NdArray& x, const NdArray& w, bool has_bias, const NdArray& dy,
    bool need_dx)
{
    const auto din = w.dim(1);
    const auto dout = w.dim(0);
    const auto rows = x.size() / din;
    if (dy.size() != rows * dout) {
        throw ShapeError("linear_backward: dy shape " + shape_to_string(dy.shape()));
    }
    LinearGrads g;
    g.dw = NdArray(w.shape());
    if (has_bias) {
        g.db = NdArray({dout});
    }
    if (need_dx) {
        g.dx = NdArray(x.shape());
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * din;
        const double* gr = dy.data() + r * dout;
        double* dxr = need_dx ? g.dx.data() + r * din : nullptr;
        for (std::size_t o = 0; o < dout; ++o) {
            const double go = gr[o];
            if (has_bias) {
                g.db[o] += go;
            }
            if (go == 0.0) {
                continue;
            }
            double* dwo = g.dw.data() + o * din;
            const double* wo = w.data() + o * din;
            for (std::size_t i = 0; i < din; ++i) {
                dwo[i] += go * xr[i];
            }
            if (dxr != nullptr) {
                for (std::size_t i = 0; i < din; ++i) {
                    dxr[i] += go * wo[i];
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------

NdArray layer_norm(const NdArray& x, const NdArray& gamma, const NdArray& beta, double eps,
    LayerNormCache* cache)
{
    if (x.rank() == 0) {
        throw ShapeError("layer_norm: input must have rank >= 1");
    }
    const auto d = x.shape().back();
    if (d < 2) {
        throw ShapeError("layer_norm: normalized dimension must be >= 2");
    }
    if (gamma.size() != d || beta.size() != d) {
        throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(d) + " entries");
    }
    const auto rows = x.size() / d;
    NdArray y(x.shape());
    NdArray x_hat;
    std::vector<double> inv_std;
    if (cache != nullptr) {
        x_hat = NdArray(x.shape());
        inv_std.resize(rows);
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            mu += xr[i];
        }
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            var += (xr[i] - mu) * (xr[i] - mu);
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) {
            const double h = (xr[i] - mu) * is;
            if (cache != nullptr) {
                x_hat[r * d + i] = h;
            }
            y[r * d + i] = gamma[i] * h + beta[i];
        }
        if (cache != nullptr) {
            inv_std[r] = is;
        }
    }
    if (cache != nullptr) {
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

LayerNormGrads layer_norm_backward(const LayerNormCache& cache, const NdArray& gamma,
    const NdArray& dy)
{
    const auto& xh = cache.x_hat;
    if (dy.shape() != xh.shape()) {
        throw ShapeError("layer_norm_backward: dy shape " + shape_to_string(dy.shape()));
    }
    const auto d = xh.shape().back();
    const auto rows = xh.size() / d;
    LayerNormGrads g{NdArray(xh.shape()), NdArray({d}), NdArray({d})};
    std::vector<double> dxh(d);
    for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        double sum_xh = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double gi = dy[r * d + i];
            g.dgamma[i] += gi * xh[r * d + i];
            g.dbeta[i] += gi;
            dxh[i] = gi * gamma[i];
            sum += dxh[i];
            sum_xh += dxh[i] * xh[r * d + i];
        }
        const double dd = static_cast<double>(d);
        for (std::size_t i = 0; i < d; ++i) {
            g.dx[r * d + i] = cache.inv_std[r] * (dxh[i] - sum / dd - xh[r * d + i] * sum_xh / dd);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------

DropoutResult dropout(const NdArray& x, double p, Mode mode, Rng& rng)
{
    if (!(p >= 0.0 && p < 1.0)) {
        throw ShapeError("dropout: p must lie in [0, 1), got " + std::to_string(p));
    }
    if (mode == Mode::Eval || p == 0.0) {
        return {x, NdArray()};
    }
    const double keep_scale = 1.0 / (1.0 - p);
    DropoutResult r{NdArray(x.shape()), NdArray(x.shape())};
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double m = uniform01(rng) < p ? 0.0 : keep_scale;
        r.mask[i] = m;
        r.out[i] = x[i] * m;
    }
    return r;
}

NdArray dropout_backward(const NdArray& mask, const NdArray& dy)
{
    if (mask.empty()) {
        return dy;
    }
    NdArray dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) {
        dx[i] = dy[i] * mask[i];
    }
    return dx;
}

// ---------------------------------------------------------------------------

NdArray softmax(const NdArray& x)
{
    if (x.rank() == 0 || x.shape().back() == 0) {
        throw ShapeError("softmax: empty class axis");
    }
    const auto c = x.shape().back();
    const auto rows = x.size() / c;
    NdArray y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * c;
        const double m = *std::max_element(xr, xr + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            y[r * c + j] = std::exp(xr[j] - m);
            s += y[r * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) {
            y[r * c + j] /= s;
        }
    }
    return y;
}

NdArray softmax_backward(const NdArray& y, const NdArray& dy)
{
    const auto c = y.shape().back();
    const auto rows = y.size() / c;
    NdArray dx(y.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            dot += y[r * c + j] * dy[r * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) {
            dx[r * c + j] = y[r * c + j] * (dy[r * c + j] - dot);
        }
    }
    return dx;
}

} // namespace bimamsleep::nn
