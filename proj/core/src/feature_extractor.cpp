#include "bimamsleep/feature_extractor.hpp"

#include "bimamsleep/error.hpp"

#include <cmath>
#include <numeric>

namespace bimamsleep {

namespace {

// Kaiming-uniform style bound for a layer with the given fan-in.
NdArray uniform_init(Shape shape, std::size_t fan_in, Rng& rng)
{
    NdArray w(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : w.values()) {
        v = uniform(rng, -bound, bound);
    }
    return w;
}

std::size_t stage_kernel(const BranchConfig& cfg, std::size_t i)
{
    return i == 0 ? cfg.kernel_size : cfg.inner_kernel;
}

std::size_t stage_stride(const BranchConfig& cfg, std::size_t i)
{
    return i == 0 ? cfg.stride : 1;
}

std::size_t stage_padding(const BranchConfig& cfg, std::size_t i)
{
    return i == 0 ? cfg.padding : cfg.inner_padding;
}

std::size_t stage_in_channels(const BranchConfig& cfg, std::size_t i)
{
    return i == 0 ? 1 : cfg.channel_plan[i - 1];
}

} // namespace

// ---------------------------------------------------------------------------

std::size_t branch_output_length(const BranchConfig& cfg, std::size_t input_length)
{
    std::size_t length = input_length;
    for (std::size_t i = 0; i < 3; ++i) {
        length = nn::conv1d_output_length(length, stage_kernel(cfg, i), stage_stride(cfg, i), stage_padding(cfg, i));
        length = nn::maxpool1d_output_length(length, cfg.pools[i].window, cfg.pools[i].stride);
    }
    return length;
}

void validate_branch(const BranchConfig& cfg, std::size_t input_length)
{
    if (cfg.kernel_size != 50 && cfg.kernel_size != 100 && cfg.kernel_size != 400) {
        throw ConfigError("branch kernel_size must be one of 50/100/400, got " + std::to_string(cfg.kernel_size));
    }
    if (cfg.channel_plan.size() != 3 || cfg.pools.size() != 3) {
        throw ConfigError("branch needs exactly 3 conv stages (channel_plan and pools of length 3)");
    }
    for (auto c : cfg.channel_plan) {
        if (c == 0) {
            throw ConfigError("branch channel_plan entries must be positive");
        }
    }
    if (cfg.stride == 0 || cfg.inner_kernel == 0) {
        throw ConfigError("branch stride and inner_kernel must be positive");
    }
    if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0)) {
        throw ConfigError("branch dropout_p must lie in [0, 1)");
    }
    std::size_t t_out = 0;
    try {
        t_out = branch_output_length(cfg, input_length);
    } catch (const ShapeError& e) {
        throw ConfigError(std::string("branch geometry: ") + e.what());
    }
    if (t_out < 4) {
        throw ConfigError("branch with kernel " + std::to_string(cfg.kernel_size) + " yields T' = "
            + std::to_string(t_out) + " (< 4)");
    }
}

TrcnnConfig full_trcnn()
{
    TrcnnConfig cfg;
    auto& small = cfg.branches[0];
    small = BranchConfig{50, 6, 24, {64, 128, 128}, 8, 4, {{8, 2}, {4, 4}, {4, 4}}, 0.5};
    auto& medium = cfg.branches[1];
    medium = BranchConfig{100, 12, 50, {64, 128, 128}, 8, 4, {{4, 2}, {2, 2}, {4, 4}}, 0.5};
    auto& large = cfg.branches[2];
    large = BranchConfig{400, 50, 200, {64, 128, 128}, 7, 3, {{2, 1}, {2, 2}, {2, 2}}, 0.5};
    return cfg;
}

TrcnnConfig desk_trcnn()
{
    auto cfg = full_trcnn();
    for (auto& b : cfg.branches) {
        b.channel_plan = {8, 16, 16};
        b.dropout_p = 0.2;
    }
    return cfg;
}

TrcnnConfig toy_trcnn()
{
    TrcnnConfig cfg;
    const std::array<std::size_t, 3> kernels{50, 100, 400};
    for (std::size_t i = 0; i < 3; ++i) {
        cfg.branches[i] = BranchConfig{kernels[i], 100, kernels[i] / 2, {2, 4, 4}, 3, 1, {{4, 2}, {2, 1}, {2, 1}}, 0.0};
    }
    return cfg;
}

std::size_t trcnn_output_length(const TrcnnConfig& cfg)
{
    const auto t = branch_output_length(cfg.branches[0]);
    for (const auto& b : cfg.branches) {
        validate_branch(b);
        if (branch_output_length(b) != t) {
            throw ConfigError("TRCNN branches disagree on output length: " + std::to_string(t) + " vs "
                + std::to_string(branch_output_length(b)));
        }
    }
    return t;
}

std::size_t trcnn_output_channels(const TrcnnConfig& cfg)
{
    std::size_t c = 0;
    for (const auto& b : cfg.branches) {
        c += branch_output_channels(b);
    }
    return c;
}

// ---------------------------------------------------------------------------

BranchParams BranchParams::init(const BranchConfig& cfg, const std::string& prefix, Rng& rng)
{
    validate_branch(cfg);
    BranchParams p;
    for (std::size_t i = 0; i < 3; ++i) {
        const auto cin = stage_in_channels(cfg, i);
        const auto cout = cfg.channel_plan[i];
        const auto k = stage_kernel(cfg, i);
        const auto tag = prefix + ".conv" + std::to_string(i);
        p.conv_w[i] = ParamTensor(tag + ".w", uniform_init({cout, cin, k}, cin * k, rng));
        p.bn_gamma[i] = ParamTensor(tag + ".bn.gamma", NdArray({cout}, 1.0));
        p.bn_beta[i] = ParamTensor(tag + ".bn.beta", NdArray({cout}, 0.0));
        p.bn[i] = nn::BatchNormState(cout);
    }
    return p;
}

std::vector<ParamTensor*> BranchParams::parameters()
{
    std::vector<ParamTensor*> out;
    for (std::size_t i = 0; i < 3; ++i) {
        out.push_back(&conv_w[i]);
        out.push_back(&bn_gamma[i]);
        out.push_back(&bn_beta[i]);
    }
    return out;
}

NdArray branch_forward(const NdArray& x, const BranchConfig& cfg, BranchParams& params, nn::Mode mode,
    Rng& rng, BranchCache* cache)
{
    if (x.rank() != 3 || x.dim(1) != 1) {
        throw ShapeError("branch_forward: expected [B,1,L] input, got " + shape_to_string(x.shape()));
    }
    NdArray h = x;
    for (std::size_t i = 0; i < 3; ++i) {
        auto* st = cache != nullptr ? &cache->stages[i] : nullptr;
        NdArray conv = nn::conv1d(h, params.conv_w[i].value, NdArray(), stage_stride(cfg, i), stage_padding(cfg, i));
        if (st != nullptr) {
            st->input = std::move(h);
        }
        NdArray normed = nn::batchnorm1d(conv, params.bn_gamma[i].value, params.bn_beta[i].value, params.bn[i], mode,
            st != nullptr ? &st->bn : nullptr);
        NdArray act = nn::activation(normed, nn::Activation::GELU);
        auto pooled = nn::maxpool1d(act, cfg.pools[i].window, cfg.pools[i].stride);
        if (st != nullptr) {
            st->pre_activation = std::move(normed);
            st->pool_input_shape = act.shape();
            st->pool_argmax = std::move(pooled.argmax);
        }
        h = std::move(pooled.out);
        if (i == 0) {
            auto dropped = nn::dropout(h, cfg.dropout_p, mode, rng);
            h = std::move(dropped.out);
            if (cache != nullptr) {
                cache->dropout_mask = std::move(dropped.mask);
            }
        }
    }
    return h;
}

NdArray branch_backward(const BranchCache& cache, const BranchConfig& cfg, BranchParams& params, const NdArray& dy,
    bool need_dx)
{
    NdArray g = dy;
    for (std::size_t i = 3; i-- > 0;) {
        const auto& st = cache.stages[i];
        if (i == 0) {
            g = nn::dropout_backward(cache.dropout_mask, g);
        }
        g = nn::maxpool1d_backward(st.pool_input_shape, st.pool_argmax, g);
        g = nn::activation_backward(st.pre_activation, g, nn::Activation::GELU);
        auto bn = nn::batchnorm1d_backward(st.bn, params.bn_gamma[i].value, g);
        add_inplace(params.bn_gamma[i].grad, bn.dgamma);
        add_inplace(params.bn_beta[i].grad, bn.dbeta);
        const bool want_dx = i > 0 || need_dx;
        auto conv = nn::conv1d_backward(st.input, params.conv_w[i].value, false, bn.dx, stage_stride(cfg, i),
            stage_padding(cfg, i), want_dx);
        add_inplace(params.conv_w[i].grad, conv.dw);
        g = std::move(conv.dx);
    }
    return g;
}

TrcnnParams TrcnnParams::init(const TrcnnConfig& cfg, Rng& rng)
{
    trcnn_output_length(cfg);
    TrcnnParams p;
    for (std::size_t i = 0; i < 3; ++i) {
        p.branches[i] = BranchParams::init(cfg.branches[i], "trcnn.branch" + std::to_string(i), rng);
    }
    return p;
}

std::vector<ParamTensor*> TrcnnParams::parameters()
{
    std::vector<ParamTensor*> out;
    for (auto& b : branches) {
        auto ps = b.parameters();
        out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
}

NdArray trcnn_forward(const NdArray& x, const TrcnnConfig& cfg, TrcnnParams& params, nn::Mode mode, Rng& rng,
    TrcnnCache* cache)
{
    std::array<NdArray, 3> outs;
    for (std::size_t i = 0; i < 3; ++i) {
        outs[i] = branch_forward(x, cfg.branches[i], params.branches[i], mode, rng,
            cache != nullptr ? &cache->branches[i] : nullptr);
    }
    const auto batch = x.dim(0);
    const auto t = outs[0].dim(2);
    std::size_t channels = 0;
    for (const auto& o : outs) {
        if (o.dim(2) != t) {
            throw ShapeError("trcnn_forward: branch output lengths differ (" + std::to_string(t) + " vs "
                + std::to_string(o.dim(2)) + ")");
        }
        channels += o.dim(1);
    }
    NdArray y({batch, channels, t});
    for (std::size_t b = 0; b < batch; ++b) {
        std::size_t c0 = 0;
        for (const auto& o : outs) {
            const auto c = o.dim(1);
            std::copy_n(o.data() + b * c * t, c * t, y.data() + (b * channels + c0) * t);
            c0 += c;
        }
    }
    return y;
}

void trcnn_backward(const TrcnnCache& cache, const TrcnnConfig& cfg, TrcnnParams& params, const NdArray& dy)
{
    const auto batch = dy.dim(0);
    const auto channels = dy.dim(1);
    const auto t = dy.dim(2);
    std::size_t c0 = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const auto c = branch_output_channels(cfg.branches[i]);
        NdArray part({batch, c, t});
        for (std::size_t b = 0; b < batch; ++b) {
            std::copy_n(dy.data() + (b * channels + c0) * t, c * t, part.data() + b * c * t);
        }
        branch_backward(cache.branches[i], cfg.branches[i], params.branches[i], part, false);
        c0 += c;
    }
}

// ---------------------------------------------------------------------------

std::size_t afm_default_reduction(std::size_t channels)
{
    return channels < 64 ? 4 : 16;
}

AfmParams AfmParams::init(std::size_t channels, std::size_t reduction, Rng& rng)
{
    if (reduction == 0 || channels % reduction != 0) {
        throw ConfigError("AFM reduction " + std::to_string(reduction) + " must divide " + std::to_string(channels)
            + " channels");
    }
    const auto hidden = channels / reduction;
    AfmParams p;
    p.reduction = reduction;
    p.w1 = ParamTensor("afm.w1", uniform_init({hidden, channels}, channels, rng));
    p.w2 = ParamTensor("afm.w2", uniform_init({channels, hidden}, hidden, rng));
    return p;
}

std::vector<ParamTensor*> AfmParams::parameters()
{
    return {&w1, &w2};
}

NdArray feature_squeeze(const NdArray& x)
{
    if (x.rank() != 3 || x.dim(2) == 0) {
        throw ShapeError("feature_squeeze: expected [B,C,T] with T >= 1, got " + shape_to_string(x.shape()));
    }
    const auto rows = x.dim(0) * x.dim(1);
    const auto t = x.dim(2);
    NdArray z({x.dim(0), x.dim(1)});
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < t; ++k) {
            s += x[r * t + k];
        }
        z[r] = s / static_cast<double>(t);
    }
    return z;
}

NdArray feature_squeeze_backward(const Shape& x_shape, const NdArray& dz)
{
    NdArray dx(x_shape);
    const auto t = x_shape[2];
    const double inv = 1.0 / static_cast<double>(t);
    for (std::size_t r = 0; r < dz.size(); ++r) {
        for (std::size_t k = 0; k < t; ++k) {
            dx[r * t + k] = dz[r] * inv;
        }
    }
    return dx;
}

NdArray feature_excite(const NdArray& z, const AfmParams& p, ExciteCache* cache)
{
    NdArray hidden_pre = nn::linear(z, p.w1.value, NdArray());
    NdArray hidden = nn::activation(hidden_pre, nn::Activation::ReLU);
    NdArray gate_pre = nn::linear(hidden, p.w2.value, NdArray());
    NdArray s = nn::activation(gate_pre, nn::Activation::Sigmoid);
    if (cache != nullptr) {
        cache->z = z;
        cache->hidden_pre = std::move(hidden_pre);
        cache->hidden = std::move(hidden);
        cache->gate_pre = std::move(gate_pre);
    }
    return s;
}

NdArray feature_excite_backward(const ExciteCache& cache, AfmParams& p, const NdArray& ds)
{
    NdArray g = nn::activation_backward(cache.gate_pre, ds, nn::Activation::Sigmoid);
    auto l2 = nn::linear_backward(cache.hidden, p.w2.value, false, g);
    add_inplace(p.w2.grad, l2.dw);
    g = nn::activation_backward(cache.hidden_pre, l2.dx, nn::Activation::ReLU);
    auto l1 = nn::linear_backward(cache.z, p.w1.value, false, g);
    add_inplace(p.w1.grad, l1.dw);
    return std::move(l1.dx);
}

NdArray feature_scale(const NdArray& x, const NdArray& s)
{
    if (x.rank() != 3 || s.rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1)) {
        throw ShapeError("feature_scale: gate " + shape_to_string(s.shape()) + " does not match features "
            + shape_to_string(x.shape()));
    }
    const auto t = x.dim(2);
    NdArray y(x.shape());
    for (std::size_t r = 0; r < s.size(); ++r) {
        for (std::size_t k = 0; k < t; ++k) {
            const double v = x[r * t + k];
            y[r * t + k] = v * s[r] + v;
        }
    }
    return y;
}

ScaleGrads feature_scale_backward(const NdArray& x, const NdArray& s, const NdArray& dy)
{
    const auto t = x.dim(2);
    ScaleGrads g{NdArray(x.shape()), NdArray(s.shape())};
    for (std::size_t r = 0; r < s.size(); ++r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t; ++k) {
            g.dx[r * t + k] = dy[r * t + k] * (1.0 + s[r]);
            acc += dy[r * t + k] * x[r * t + k];
        }
        g.ds[r] = acc;
    }
    return g;
}

NdArray afm_forward(const NdArray& x, const AfmParams& p, AfmCache* cache)
{
    const NdArray z = feature_squeeze(x);
    NdArray s = feature_excite(z, p, cache != nullptr ? &cache->excite : nullptr);
    NdArray y = feature_scale(x, s);
    if (cache != nullptr) {
        cache->x = x;
        cache->gate = std::move(s);
    }
    return y;
}

NdArray afm_backward(const AfmCache& cache, AfmParams& p, const NdArray& dy)
{
    auto sg = feature_scale_backward(cache.x, cache.gate, dy);
    NdArray dz = feature_excite_backward(cache.excite, p, sg.ds);
    NdArray dx = feature_squeeze_backward(cache.x.shape(), dz);
    add_inplace(dx, sg.dx);
    return dx;
}

} // namespace bimamsleep
