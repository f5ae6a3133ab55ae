#include "bimamsleep/bimamba.hpp"

#include "bimamsleep/error.hpp"

#include <cmath>

namespace bimamsleep {

namespace {

NdArray uniform_array(Shape shape, double bound, Rng& rng)
{
    NdArray w(std::move(shape));
    for (auto& v : w.values()) {
        v = uniform(rng, -bound, bound);
    }
    return w;
}

double inv_sqrt(std::size_t n)
{
    return 1.0 / std::sqrt(static_cast<double>(n));
}

NdArray multiply(const NdArray& a, const NdArray& b)
{
    NdArray out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    return out;
}

} // namespace

std::string_view fusion_mode_name(FusionMode m)
{
    return m == FusionMode::GatedResidual ? "gated_residual" : "average";
}

std::optional<FusionMode> parse_fusion_mode(std::string_view s)
{
    if (s == "gated_residual") {
        return FusionMode::GatedResidual;
    }
    if (s == "average") {
        return FusionMode::Average;
    }
    return std::nullopt;
}

std::string_view variant_name(MambaVariant v)
{
    switch (v) {
    case MambaVariant::BiMamba:
        return "bimamba";
    case MambaVariant::FwdOnly:
        return "fwd_only";
    case MambaVariant::BwdOnly:
        return "bwd_only";
    case MambaVariant::NoMamba:
        return "no_mamba";
    }
    return "bimamba";
}

std::optional<MambaVariant> parse_variant(std::string_view s)
{
    for (auto v : {MambaVariant::NoMamba, MambaVariant::FwdOnly, MambaVariant::BwdOnly, MambaVariant::BiMamba}) {
        if (variant_name(v) == s) {
            return v;
        }
    }
    return std::nullopt;
}

void MambaConfig::validate() const
{
    if (d_model == 0 || expand == 0 || state_size == 0) {
        throw ConfigError("mamba: d_model, expand and state_size must be positive");
    }
    if (conv_width < 2) {
        throw ConfigError("mamba: conv_width must be at least 2, got " + std::to_string(conv_width));
    }
}

// ---------------------------------------------------------------------------

DirectionParams DirectionParams::init(const MambaConfig& cfg, const std::string& prefix, Rng& rng)
{
    const auto d = cfg.d_inner();
    const auto n = cfg.state_size;
    const auto w = cfg.conv_width;
    DirectionParams p;
    p.conv_w = ParamTensor(prefix + ".conv_w", uniform_array({d, w}, inv_sqrt(w), rng));
    p.conv_b = ParamTensor(prefix + ".conv_b", uniform_array({d}, inv_sqrt(w), rng));
    p.w_dt = ParamTensor(prefix + ".w_dt", uniform_array({d, d}, inv_sqrt(d), rng));
    // Softplus(b_dt) log-uniform in [1e-3, 1e-1].
    NdArray b_dt({d});
    for (auto& v : b_dt.values()) {
        const double dt = std::exp(uniform(rng, std::log(1e-3), std::log(1e-1)));
        v = dt + std::log(-std::expm1(-dt));
    }
    p.b_dt = ParamTensor(prefix + ".b_dt", std::move(b_dt));
    p.w_b = ParamTensor(prefix + ".w_b", uniform_array({n, d}, inv_sqrt(d), rng));
    p.w_c = ParamTensor(prefix + ".w_c", uniform_array({n, d}, inv_sqrt(d), rng));
    NdArray a_log({d, n});
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            a_log[i * n + k] = std::log(static_cast<double>(k + 1));
        }
    }
    p.a_log = ParamTensor(prefix + ".a_log", std::move(a_log));
    return p;
}

std::vector<ParamTensor*> DirectionParams::parameters()
{
    return {&conv_w, &conv_b, &w_dt, &b_dt, &w_b, &w_c, &a_log};
}

BlockParams BlockParams::init(const MambaConfig& cfg, const std::string& prefix, Rng& rng)
{
    cfg.validate();
    const auto dm = cfg.d_model;
    const auto d = cfg.d_inner();
    BlockParams p;
    p.ln_gamma = ParamTensor(prefix + ".ln.gamma", NdArray({dm}, 1.0));
    p.ln_beta = ParamTensor(prefix + ".ln.beta", NdArray({dm}, 0.0));
    p.w_in_x = ParamTensor(prefix + ".w_in_x", uniform_array({d, dm}, inv_sqrt(dm), rng));
    p.w_in_z = ParamTensor(prefix + ".w_in_z", uniform_array({d, dm}, inv_sqrt(dm), rng));
    p.fwd = DirectionParams::init(cfg, prefix + ".fwd", rng);
    p.bwd = DirectionParams::init(cfg, prefix + ".bwd", rng);
    p.w_out = ParamTensor(prefix + ".w_out", uniform_array({dm, d}, inv_sqrt(d), rng));
    p.b_out = ParamTensor(prefix + ".b_out", NdArray({dm}, 0.0));
    return p;
}

std::vector<ParamTensor*> BlockParams::parameters()
{
    std::vector<ParamTensor*> out{&ln_gamma, &ln_beta, &w_in_x, &w_in_z};
    for (auto* t : fwd.parameters()) {
        out.push_back(t);
    }
    for (auto* t : bwd.parameters()) {
        out.push_back(t);
    }
    out.push_back(&w_out);
    out.push_back(&b_out);
    return out;
}

// ---------------------------------------------------------------------------

NdArray state_matrix(const NdArray& a_log)
{
    NdArray a(a_log.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = -std::exp(a_log[i]);
    }
    return a;
}

SsmParams selective_params(const NdArray& xd, const DirectionParams& p)
{
    if (!xd.all_finite()) {
        throw NumericError("selective_params: non-finite input");
    }
    SsmParams sp;
    sp.delta = nn::activation(nn::linear(xd, p.w_dt.value, p.b_dt.value), nn::Activation::Softplus);
    sp.b = nn::linear(xd, p.w_b.value, NdArray());
    sp.c = nn::linear(xd, p.w_c.value, NdArray());
    return sp;
}

DiscreteSsm discretize_selective(const SsmParams& sp, const NdArray& a)
{
    const auto batch = sp.delta.dim(0);
    const auto length = sp.delta.dim(1);
    const auto d = sp.delta.dim(2);
    const auto n = a.dim(1);
    DiscreteSsm out{NdArray({batch, length, d, n}), NdArray({batch, length, d, n}), sp.c};
    for (std::size_t r = 0; r < batch * length; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            const double dt = sp.delta[r * d + i];
            for (std::size_t k = 0; k < n; ++k) {
                out.a_bar[(r * d + i) * n + k] = std::exp(dt * a[i * n + k]);
                out.b_bar[(r * d + i) * n + k] = dt * sp.b[r * n + k];
            }
        }
    }
    return out;
}

NdArray causal_depthwise_conv(const NdArray& x, const NdArray& w, const NdArray& b)
{
    const auto batch = x.dim(0);
    const auto length = x.dim(1);
    const auto d = x.dim(2);
    const auto width = w.dim(1);
    if (w.dim(0) != d || b.size() != d) {
        throw ShapeError("causal_depthwise_conv: weights " + shape_to_string(w.shape()) + " vs input "
            + shape_to_string(x.shape()));
    }
    NdArray y(x.shape());
    for (std::size_t bb = 0; bb < batch; ++bb) {
        for (std::size_t t = 0; t < length; ++t) {
            double* out = y.data() + (bb * length + t) * d;
            for (std::size_t i = 0; i < d; ++i) {
                out[i] = b[i];
            }
            for (std::size_t k = 0; k < width; ++k) {
                const auto lag = width - 1 - k;
                if (lag > t) {
                    continue;
                }
                const double* in = x.data() + (bb * length + t - lag) * d;
                for (std::size_t i = 0; i < d; ++i) {
                    out[i] += w[i * width + k] * in[i];
                }
            }
        }
    }
    return y;
}

NdArray reverse_time(const NdArray& x)
{
    const auto batch = x.dim(0);
    const auto length = x.dim(1);
    const auto row = x.size() / (batch * length);
    NdArray y(x.shape());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < length; ++t) {
            std::copy_n(x.data() + (b * length + t) * row, row, y.data() + (b * length + length - 1 - t) * row);
        }
    }
    return y;
}

NdArray direction_forward(const NdArray& x_proj, Direction dir, const DirectionParams& p, DirectionCache* cache)
{
    if (x_proj.rank() != 3 || x_proj.dim(2) != p.conv_w.value.dim(0)) {
        throw ShapeError("direction_forward: expected [B,L,D_inner], got " + shape_to_string(x_proj.shape()));
    }
    NdArray input = dir == Direction::Backward ? reverse_time(x_proj) : x_proj;
    NdArray conv_out = causal_depthwise_conv(input, p.conv_w.value, p.conv_b.value);
    NdArray xd = nn::activation(conv_out, nn::Activation::SiLU);
    NdArray dt_pre = nn::linear(xd, p.w_dt.value, p.b_dt.value);
    SsmParams sp;
    sp.delta = nn::activation(dt_pre, nn::Activation::Softplus);
    sp.b = nn::linear(xd, p.w_b.value, NdArray());
    sp.c = nn::linear(xd, p.w_c.value, NdArray());
    NdArray a = state_matrix(p.a_log.value);
    NdArray y = selective_scan(xd, sp.delta, a, sp.b, sp.c, cache != nullptr ? &cache->scan : nullptr);
    if (cache != nullptr) {
        cache->input = std::move(input);
        cache->conv_out = std::move(conv_out);
        cache->xd = std::move(xd);
        cache->dt_pre = std::move(dt_pre);
        cache->ssm = std::move(sp);
        cache->a = std::move(a);
    }
    return dir == Direction::Backward ? reverse_time(y) : y;
}

NdArray direction_backward(const DirectionCache& cache, Direction dir, DirectionParams& p, const NdArray& dy_in)
{
    const NdArray dy = dir == Direction::Backward ? reverse_time(dy_in) : dy_in;
    auto sg = selective_scan_backward(cache.scan, cache.xd, cache.ssm.delta, cache.a, cache.ssm.b, cache.ssm.c, dy);

    NdArray dxd = std::move(sg.dxd);
    auto lb = nn::linear_backward(cache.xd, p.w_b.value, false, sg.dbt);
    add_inplace(p.w_b.grad, lb.dw);
    add_inplace(dxd, lb.dx);
    auto lc = nn::linear_backward(cache.xd, p.w_c.value, false, sg.dct);
    add_inplace(p.w_c.grad, lc.dw);
    add_inplace(dxd, lc.dx);
    NdArray ddt_pre = nn::activation_backward(cache.dt_pre, sg.ddelta, nn::Activation::Softplus);
    auto ldt = nn::linear_backward(cache.xd, p.w_dt.value, true, ddt_pre);
    add_inplace(p.w_dt.grad, ldt.dw);
    add_inplace(p.b_dt.grad, ldt.db);
    add_inplace(dxd, ldt.dx);

    for (std::size_t i = 0; i < p.a_log.grad.size(); ++i) {
        p.a_log.grad[i] += sg.da[i] * cache.a[i];
    }

    const NdArray dconv = nn::activation_backward(cache.conv_out, dxd, nn::Activation::SiLU);
    const auto batch = dconv.dim(0);
    const auto length = dconv.dim(1);
    const auto d = dconv.dim(2);
    const auto width = p.conv_w.value.dim(1);
    NdArray dx(dconv.shape());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < length; ++t) {
            const double* g = dconv.data() + (b * length + t) * d;
            for (std::size_t i = 0; i < d; ++i) {
                p.conv_b.grad[i] += g[i];
            }
            for (std::size_t k = 0; k < width; ++k) {
                const auto lag = width - 1 - k;
                if (lag > t) {
                    continue;
                }
                const auto src = (b * length + t - lag) * d;
                for (std::size_t i = 0; i < d; ++i) {
                    p.conv_w.grad[i * width + k] += g[i] * cache.input[src + i];
                    dx[src + i] += g[i] * p.conv_w.value[i * width + k];
                }
            }
        }
    }
    return dir == Direction::Backward ? reverse_time(dx) : dx;
}

// ---------------------------------------------------------------------------

NdArray bimamba_block(const NdArray& x, const BlockParams& p, const MambaConfig& cfg, BlockCache* cache)
{
    if (x.rank() != 3 || x.dim(2) != cfg.d_model) {
        throw ShapeError("bimamba_block: expected [B,L," + std::to_string(cfg.d_model) + "], got "
            + shape_to_string(x.shape()));
    }
    if (cfg.variant == MambaVariant::NoMamba) {
        return x;
    }
    nn::LayerNormCache ln_cache;
    NdArray x_norm = nn::layer_norm(x, p.ln_gamma.value, p.ln_beta.value, 1e-5, cache != nullptr ? &ln_cache : nullptr);
    NdArray x_proj = nn::linear(x_norm, p.w_in_x.value, NdArray());
    // Average combines the raw direction outputs, so the gate branch is unused.
    const bool gated = cfg.fusion == FusionMode::GatedResidual;
    NdArray z;
    NdArray gate;
    if (gated) {
        z = nn::linear(x_norm, p.w_in_z.value, NdArray());
        gate = nn::activation(z, nn::Activation::SiLU);
    }

    const bool use_fwd = cfg.variant != MambaVariant::BwdOnly;
    const bool use_bwd = cfg.variant != MambaVariant::FwdOnly;
    NdArray fused(x_proj.shape());
    NdArray y_fwd_raw;
    NdArray y_bwd_raw;
    if (use_fwd) {
        y_fwd_raw = direction_forward(x_proj, Direction::Forward, p.fwd, cache != nullptr ? &cache->fwd : nullptr);
        add_inplace(fused, gated ? multiply(y_fwd_raw, gate) : y_fwd_raw);
    }
    if (use_bwd) {
        y_bwd_raw = direction_forward(x_proj, Direction::Backward, p.bwd, cache != nullptr ? &cache->bwd : nullptr);
        add_inplace(fused, gated ? multiply(y_bwd_raw, gate) : y_bwd_raw);
    }
    if (cfg.fusion == FusionMode::Average) {
        for (auto& v : fused.values()) {
            v *= 0.5;
        }
    }
    NdArray out = nn::linear(fused, p.w_out.value, p.b_out.value);
    if (cfg.fusion == FusionMode::GatedResidual) {
        add_inplace(out, x);
    }
    if (cache != nullptr) {
        cache->x = x;
        cache->ln = std::move(ln_cache);
        cache->x_norm = std::move(x_norm);
        cache->x_proj = std::move(x_proj);
        cache->z = std::move(z);
        cache->gate = std::move(gate);
        cache->y_fwd_raw = std::move(y_fwd_raw);
        cache->y_bwd_raw = std::move(y_bwd_raw);
        cache->fused = std::move(fused);
    }
    return out;
}

NdArray bimamba_block_backward(const BlockCache& cache, BlockParams& p, const MambaConfig& cfg, const NdArray& dy)
{
    if (cfg.variant == MambaVariant::NoMamba) {
        return dy;
    }
    auto lo = nn::linear_backward(cache.fused, p.w_out.value, true, dy);
    add_inplace(p.w_out.grad, lo.dw);
    add_inplace(p.b_out.grad, lo.db);
    NdArray dsum = std::move(lo.dx);
    if (cfg.fusion == FusionMode::Average) {
        for (auto& v : dsum.values()) {
            v *= 0.5;
        }
    }

    const bool gated = cfg.fusion == FusionMode::GatedResidual;
    NdArray dgate(cache.gate.shape());
    NdArray dx_proj(cache.x_proj.shape());
    const auto run_direction = [&](const NdArray& raw, const DirectionCache& dc, Direction dir, DirectionParams& dp) {
        if (raw.empty()) {
            return;
        }
        if (!gated) {
            add_inplace(dx_proj, direction_backward(dc, dir, dp, dsum));
            return;
        }
        add_inplace(dgate, multiply(dsum, raw));
        add_inplace(dx_proj, direction_backward(dc, dir, dp, multiply(dsum, cache.gate)));
    };
    run_direction(cache.y_fwd_raw, cache.fwd, Direction::Forward, p.fwd);
    run_direction(cache.y_bwd_raw, cache.bwd, Direction::Backward, p.bwd);

    auto lx = nn::linear_backward(cache.x_norm, p.w_in_x.value, false, dx_proj);
    add_inplace(p.w_in_x.grad, lx.dw);
    if (gated) {
        const NdArray dz = nn::activation_backward(cache.z, dgate, nn::Activation::SiLU);
        auto lz = nn::linear_backward(cache.x_norm, p.w_in_z.value, false, dz);
        add_inplace(p.w_in_z.grad, lz.dw);
        add_inplace(lx.dx, lz.dx);
    }
    auto ln = nn::layer_norm_backward(cache.ln, p.ln_gamma.value, lx.dx);
    add_inplace(p.ln_gamma.grad, ln.dgamma);
    add_inplace(p.ln_beta.grad, ln.dbeta);
    NdArray dx = std::move(ln.dx);
    if (cfg.fusion == FusionMode::GatedResidual) {
        add_inplace(dx, dy);
    }
    return dx;
}

} // namespace bimamsleep
