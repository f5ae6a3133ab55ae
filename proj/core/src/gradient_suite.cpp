#include "bimamsleep/gradient_suite.hpp"

#include "bimamsleep/bimamba.hpp"
#include "bimamsleep/feature_extractor.hpp"
#include "bimamsleep/focal_loss.hpp"
#include "bimamsleep/model.hpp"
#include "bimamsleep/ops.hpp"
#include "bimamsleep/random.hpp"
#include "bimamsleep/signal_io.hpp"
#include "bimamsleep/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bimamsleep {

namespace {

NdArray random_array(Shape shape, Rng& rng, double scale = 1.0)
{
    NdArray a(std::move(shape));
    for (auto& v : a.values()) {
        v = scale * standard_normal(rng);
    }
    return a;
}

// Entries bounded away from zero (kinks of ReLU and friends).
NdArray random_away_from_zero(Shape shape, Rng& rng)
{
    NdArray a(std::move(shape));
    for (auto& v : a.values()) {
        double u = standard_normal(rng);
        while (std::abs(u) < 1e-2) {
            u = standard_normal(rng);
        }
        v = u;
    }
    return a;
}

NdArray with_values(const NdArray& like, std::span<const double> v)
{
    return NdArray(like.shape(), std::vector<double>(v.begin(), v.end()));
}

class Suite {
public:
    Suite(const GradientSuiteOptions& opt, const std::function<void(const GradCheckReport&)>& cb)
        : opt_(opt)
        , cb_(cb)
        , rng_(opt.seed)
    {
    }

    Rng& rng() { return rng_; }

    // Checks d<r, f(x)>/dx for a fixed random projection r against `analytic(r)`.
    template <typename Fwd, typename Grad>
    void projected(const std::string& name, const NdArray& x0, Fwd fwd, Grad analytic)
    {
        const NdArray y0 = fwd(x0);
        const NdArray r = random_array(y0.shape(), rng_);
        const NdArray g = analytic(r);
        // Projecting y - y0 keeps unchanged outputs (residual paths) out of the
        // sum, so they contribute no roundoff to the difference quotient.
        const ScalarFunction f = [&](std::span<const double> v) {
            const NdArray y = fwd(with_values(x0, v));
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                acc += (y[i] - y0[i]) * r[i];
            }
            return acc;
        };
        add(grad_check(name, f, x0.values(), g.values(), opt_.tolerance, opt_.step));
    }

    void scalar(const std::string& name, const NdArray& x0, const ScalarFunction& f, const NdArray& analytic)
    {
        add(grad_check(name, f, x0.values(), analytic.values(), opt_.tolerance, opt_.step));
    }

    std::vector<GradCheckReport> take() { return std::move(reports_); }

private:
    void add(GradCheckReport r)
    {
        if (cb_) {
            cb_(r);
        }
        reports_.push_back(std::move(r));
    }

    GradientSuiteOptions opt_;
    std::function<void(const GradCheckReport&)> cb_;
    Rng rng_;
    std::vector<GradCheckReport> reports_;
};

void check_primitives(Suite& s)
{
    auto& rng = s.rng();
    {
        const NdArray x = random_array({2, 3, 20}, rng);
        const NdArray w = random_array({4, 3, 5}, rng);
        const NdArray b = random_array({4}, rng);
        const std::size_t stride = 2;
        const std::size_t pad = 2;
        const auto grads = [&](const NdArray& r) { return nn::conv1d_backward(x, w, true, r, stride, pad, true); };
        s.projected("conv1d.dx", x, [&](const NdArray& v) { return nn::conv1d(v, w, b, stride, pad); },
            [&](const NdArray& r) { return grads(r).dx; });
        s.projected("conv1d.dw", w, [&](const NdArray& v) { return nn::conv1d(x, v, b, stride, pad); },
            [&](const NdArray& r) { return grads(r).dw; });
        s.projected("conv1d.db", b, [&](const NdArray& v) { return nn::conv1d(x, w, v, stride, pad); },
            [&](const NdArray& r) { return grads(r).db; });
    }
    {
        const NdArray x = random_array({3, 4, 6}, rng);
        const NdArray gamma = random_array({4}, rng);
        const NdArray beta = random_array({4}, rng);
        const auto fwd = [&](const NdArray& xv, const NdArray& gv, const NdArray& bv) {
            nn::BatchNormState st(4);
            return nn::batchnorm1d(xv, gv, bv, st, nn::Mode::Train);
        };
        const auto grads = [&](const NdArray& r) {
            nn::BatchNormState st(4);
            nn::BatchNormCache cache;
            nn::batchnorm1d(x, gamma, beta, st, nn::Mode::Train, &cache);
            return nn::batchnorm1d_backward(cache, gamma, r);
        };
        s.projected("batchnorm1d.dx", x, [&](const NdArray& v) { return fwd(v, gamma, beta); },
            [&](const NdArray& r) { return grads(r).dx; });
        s.projected("batchnorm1d.dgamma", gamma, [&](const NdArray& v) { return fwd(x, v, beta); },
            [&](const NdArray& r) { return grads(r).dgamma; });
        s.projected("batchnorm1d.dbeta", beta, [&](const NdArray& v) { return fwd(x, gamma, v); },
            [&](const NdArray& r) { return grads(r).dbeta; });
    }
    for (auto kind : {nn::Activation::GELU, nn::Activation::SiLU, nn::Activation::ReLU, nn::Activation::Sigmoid,
             nn::Activation::Softplus}) {
        const NdArray x = random_away_from_zero({20}, rng);
        s.projected(std::string("activation.") + nn::activation_name(kind), x,
            [&](const NdArray& v) { return nn::activation(v, kind); },
            [&](const NdArray& r) { return nn::activation_backward(x, r, kind); });
    }
    {
        const NdArray x = random_array({2, 3, 17}, rng);
        const auto pooled = nn::maxpool1d(x, 4, 3);
        s.projected("maxpool1d.dx", x, [&](const NdArray& v) { return nn::maxpool1d(v, 4, 3).out; },
            [&](const NdArray& r) { return nn::maxpool1d_backward(x.shape(), pooled.argmax, r); });
    }
    {
        const NdArray x = random_array({2, 3, 5}, rng);
        const NdArray w = random_array({4, 5}, rng);
        const NdArray b = random_array({4}, rng);
        s.projected("linear.dx", x, [&](const NdArray& v) { return nn::linear(v, w, b); },
            [&](const NdArray& r) { return nn::linear_backward(x, w, true, r).dx; });
        s.projected("linear.dw", w, [&](const NdArray& v) { return nn::linear(x, v, b); },
            [&](const NdArray& r) { return nn::linear_backward(x, w, true, r).dw; });
        s.projected("linear.db", b, [&](const NdArray& v) { return nn::linear(x, w, v); },
            [&](const NdArray& r) { return nn::linear_backward(x, w, true, r).db; });
    }
    {
        const NdArray x = random_array({3, 6}, rng);
        const NdArray gamma = random_array({6}, rng);
        const NdArray beta = random_array({6}, rng);
        const auto grads = [&](const NdArray& r) {
            nn::LayerNormCache cache;
            nn::layer_norm(x, gamma, beta, 1e-5, &cache);
            return nn::layer_norm_backward(cache, gamma, r);
        };
        s.projected("layer_norm.dx", x, [&](const NdArray& v) { return nn::layer_norm(v, gamma, beta); },
            [&](const NdArray& r) { return grads(r).dx; });
        s.projected("layer_norm.dgamma", gamma, [&](const NdArray& v) { return nn::layer_norm(x, v, beta); },
            [&](const NdArray& r) { return grads(r).dgamma; });
        s.projected("layer_norm.dbeta", beta, [&](const NdArray& v) { return nn::layer_norm(x, gamma, v); },
            [&](const NdArray& r) { return grads(r).dbeta; });
    }
    {
        const NdArray x = random_array({4, 10}, rng);
        const auto run = [](const NdArray& v) {
            Rng local(99);
            return nn::dropout(v, 0.3, nn::Mode::Train, local);
        };
        const auto mask = run(x).mask;
        s.projected("dropout.dx", x, [&](const NdArray& v) { return run(v).out; },
            [&](const NdArray& r) { return nn::dropout_backward(mask, r); });
    }
    {
        const NdArray x = random_array({3, 5}, rng);
        const NdArray y = nn::softmax(x);
        s.projected("softmax.dx", x, [&](const NdArray& v) { return nn::softmax(v); },
            [&](const NdArray& r) { return nn::softmax_backward(y, r); });
    }
}

void check_afm(Suite& s)
{
    auto& rng = s.rng();
    const std::size_t c = 8;
    const NdArray x = random_array({2, c, 5}, rng);
    AfmParams p = AfmParams::init(c, 4, rng);

    s.projected("feature_squeeze.dx", x, [&](const NdArray& v) { return feature_squeeze(v); },
        [&](const NdArray& r) { return feature_squeeze_backward(x.shape(), r); });

    const NdArray z = feature_squeeze(x);
    const auto excite_grads = [&](const NdArray& r, AfmParams& q) {
        ExciteCache cache;
        feature_excite(z, q, &cache);
        q.w1.zero_grad();
        q.w2.zero_grad();
        return feature_excite_backward(cache, q, r);
    };
    s.projected("feature_excite.dz", z, [&](const NdArray& v) { return feature_excite(v, p); },
        [&](const NdArray& r) { return excite_grads(r, p); });
    s.projected("feature_excite.dw1", p.w1.value,
        [&](const NdArray& v) {
            AfmParams q = p;
            q.w1.value = v;
            return feature_excite(z, q);
        },
        [&](const NdArray& r) {
            AfmParams q = p;
            excite_grads(r, q);
            return q.w1.grad;
        });
    s.projected("feature_excite.dw2", p.w2.value,
        [&](const NdArray& v) {
            AfmParams q = p;
            q.w2.value = v;
            return feature_excite(z, q);
        },
        [&](const NdArray& r) {
            AfmParams q = p;
            excite_grads(r, q);
            return q.w2.grad;
        });

    NdArray gate({2, c});
    for (auto& v : gate.values()) {
        v = uniform01(rng);
    }
    s.projected("feature_scale.dx", x, [&](const NdArray& v) { return feature_scale(v, gate); },
        [&](const NdArray& r) { return feature_scale_backward(x, gate, r).dx; });
    s.projected("feature_scale.ds", gate, [&](const NdArray& v) { return feature_scale(x, v); },
        [&](const NdArray& r) { return feature_scale_backward(x, gate, r).ds; });

    const auto afm_grads = [&](const NdArray& r, AfmParams& q) {
        AfmCache cache;
        afm_forward(x, q, &cache);
        q.w1.zero_grad();
        q.w2.zero_grad();
        return afm_backward(cache, q, r);
    };
    s.projected("afm.dx", x, [&](const NdArray& v) { return afm_forward(v, p); },
        [&](const NdArray& r) {
            AfmParams q = p;
            return afm_grads(r, q);
        });
    s.projected("afm.dw1", p.w1.value,
        [&](const NdArray& v) {
            AfmParams q = p;
            q.w1.value = v;
            return afm_forward(x, q);
        },
        [&](const NdArray& r) {
            AfmParams q = p;
            afm_grads(r, q);
            return q.w1.grad;
        });
}

void check_scan(Suite& s)
{
    auto& rng = s.rng();
    const std::size_t b = 2;
    const std::size_t l = 6;
    const std::size_t d = 3;
    const std::size_t n = 4;
    const NdArray xd = random_array({b, l, d}, rng);
    NdArray delta({b, l, d});
    for (auto& v : delta.values()) {
        v = uniform(rng, 0.05, 0.8);
    }
    NdArray a({d, n});
    for (auto& v : a.values()) {
        v = -uniform(rng, 0.2, 2.0);
    }
    const NdArray bt = random_array({b, l, n}, rng);
    const NdArray ct = random_array({b, l, n}, rng);
    const auto grads = [&](const NdArray& r) {
        SelectiveScanCache cache;
        selective_scan(xd, delta, a, bt, ct, &cache);
        return selective_scan_backward(cache, xd, delta, a, bt, ct, r);
    };
    s.projected("selective_scan.dx", xd, [&](const NdArray& v) { return selective_scan(v, delta, a, bt, ct); },
        [&](const NdArray& r) { return grads(r).dxd; });
    s.projected("selective_scan.ddelta", delta, [&](const NdArray& v) { return selective_scan(xd, v, a, bt, ct); },
        [&](const NdArray& r) { return grads(r).ddelta; });
    s.projected("selective_scan.dA", a, [&](const NdArray& v) { return selective_scan(xd, delta, v, bt, ct); },
        [&](const NdArray& r) { return grads(r).da; });
    s.projected("selective_scan.dB", bt, [&](const NdArray& v) { return selective_scan(xd, delta, a, v, ct); },
        [&](const NdArray& r) { return grads(r).dbt; });
    s.projected("selective_scan.dC", ct, [&](const NdArray& v) { return selective_scan(xd, delta, a, bt, v); },
        [&](const NdArray& r) { return grads(r).dct; });
}

// Checks a parameterized op with respect to its input and every parameter tensor.
template <typename Params, typename Fwd, typename Bwd>
void check_params(Suite& s, const std::string& prefix, const NdArray& x, const Params& p0, Fwd fwd, Bwd bwd)
{
    // fwd(x, params) -> y ; bwd(x, params&, r) -> dx (accumulating params grads)
    const auto run_backward = [&](const NdArray& r) {
        Params q = p0;
        for (auto* t : q.parameters()) {
            t->zero_grad();
        }
        NdArray dx = bwd(x, q, r);
        return std::make_pair(std::move(dx), std::move(q));
    };
    s.projected(prefix + ".dx", x, [&](const NdArray& v) { return fwd(v, p0); },
        [&](const NdArray& r) { return run_backward(r).first; });
    Params probe = p0;
    const auto tensors = probe.parameters();
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        s.projected(prefix + "." + tensors[k]->name, tensors[k]->value,
            [&](const NdArray& v) {
                Params q = p0;
                q.parameters()[k]->value = v;
                return fwd(x, q);
            },
            [&](const NdArray& r) {
                auto [dx, q] = run_backward(r);
                return q.parameters()[k]->grad;
            });
    }
}

// Moves a block away from its initialization, where delta is tiny and most
// selective-path gradients sit near 1e-8 (below central-difference roundoff).
void condition_direction(DirectionParams& d, Rng& rng)
{
    for (auto& v : d.conv_w.value.values()) {
        v = 0.5 * standard_normal(rng);
    }
    for (auto& v : d.conv_b.value.values()) {
        v = 0.2 * standard_normal(rng);
    }
    for (auto& v : d.w_dt.value.values()) {
        v = 0.3 * standard_normal(rng);
    }
    for (auto& v : d.b_dt.value.values()) {
        v = 0.3 * standard_normal(rng);
    }
    for (auto* t : {&d.w_b, &d.w_c}) {
        for (auto& v : t->value.values()) {
            v = 0.5 * standard_normal(rng);
        }
    }
    for (auto& v : d.a_log.value.values()) {
        v = uniform(rng, -0.5, 0.7);
    }
}

void condition_block(BlockParams& p, Rng& rng)
{
    for (auto& v : p.ln_gamma.value.values()) {
        v = 1.0 + 0.2 * standard_normal(rng);
    }
    for (auto& v : p.ln_beta.value.values()) {
        v = 0.1 * standard_normal(rng);
    }
    for (auto* t : {&p.w_in_x, &p.w_in_z, &p.w_out}) {
        for (auto& v : t->value.values()) {
            v = 0.4 * standard_normal(rng);
        }
    }
    for (auto& v : p.b_out.value.values()) {
        v = 0.1 * standard_normal(rng);
    }
    condition_direction(p.fwd, rng);
    condition_direction(p.bwd, rng);
}

void check_bimamba(Suite& s)
{
    auto& rng = s.rng();
    MambaConfig cfg{8, 2, 4, 4, FusionMode::GatedResidual, MambaVariant::BiMamba};
    const std::size_t l = 12;
    const NdArray x = random_array({2, l, cfg.d_model}, rng);

    DirectionParams dp = DirectionParams::init(cfg, "dir", rng);
    condition_direction(dp, rng);
    const NdArray xp = random_array({2, l, cfg.d_inner()}, rng);
    for (auto dir : {Direction::Forward, Direction::Backward}) {
        check_params(s, dir == Direction::Forward ? "direction_fwd" : "direction_bwd", xp, dp,
            [dir](const NdArray& v, const DirectionParams& q) { return direction_forward(v, dir, q); },
            [dir](const NdArray& v, DirectionParams& q, const NdArray& r) {
                DirectionCache cache;
                direction_forward(v, dir, q, &cache);
                return direction_backward(cache, dir, q, r);
            });
    }

    for (auto fusion : {FusionMode::GatedResidual, FusionMode::Average}) {
        MambaConfig c = cfg;
        c.fusion = fusion;
        BlockParams bp = BlockParams::init(c, "block", rng);
        condition_block(bp, rng);
        check_params(s, "bimamba_block[" + std::string(fusion_mode_name(fusion)) + "]", x, bp,
            [c](const NdArray& v, const BlockParams& q) { return bimamba_block(v, q, c); },
            [c](const NdArray& v, BlockParams& q, const NdArray& r) {
                BlockCache cache;
                bimamba_block(v, q, c, &cache);
                return bimamba_block_backward(cache, q, c, r);
            });
    }
}

void check_focal(Suite& s)
{
    auto& rng = s.rng();
    const NdArray logits = random_array({6, 5}, rng, 2.0);
    std::vector<std::size_t> labels(6);
    for (auto& y : labels) {
        y = uniform_index(rng, 5);
    }
    FocalConfig cfg;
    cfg.gamma = 2.0;
    for (auto& a : cfg.alpha) {
        a = uniform(rng, 0.5, 2.0);
    }
    const auto r = focal_loss(logits, labels, cfg);
    // The batch loss is the mean of row losses; differencing row by row keeps the
    // unperturbed rows out of the rounding of the quotient.
    const std::size_t n = labels.size();
    const auto row_loss = [&](std::span<const double> v, std::size_t i) {
        NdArray row({1, 5}, std::vector<double>(v.begin() + 5 * i, v.begin() + 5 * (i + 1)));
        return focal_loss(row, std::span<const std::size_t>(&labels[i], 1), cfg).loss / static_cast<double>(n);
    };
    std::vector<double> base(n);
    for (std::size_t i = 0; i < n; ++i) {
        base[i] = row_loss(logits.values(), i);
    }
    s.scalar("focal_loss.dlogits", logits,
        [&](std::span<const double> v) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += row_loss(v, i) - base[i];
            }
            return acc;
        },
        r.grad);
}

// Focal loss evaluated in long double (FD oracle for the model check).
double focal_loss_extended(const NdArray& logits, std::span<const std::size_t> labels, const FocalConfig& cfg)
{
    const std::size_t c = logits.dim(1);
    long double total = 0.0L;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double* row = logits.data() + i * c;
        const long double m = *std::max_element(row, row + c);
        long double z = 0.0L;
        long double rest = 0.0L;
        for (std::size_t j = 0; j < c; ++j) {
            const long double e = std::exp(static_cast<long double>(row[j]) - m);
            z += e;
            if (j != labels[i]) {
                rest += e;
            }
        }
        const long double log_p = static_cast<long double>(row[labels[i]]) - m - std::log(z);
        const long double q = rest / z;
        total -= static_cast<long double>(cfg.alpha[labels[i]]) * std::pow(q, static_cast<long double>(cfg.gamma))
            * log_p;
    }
    return static_cast<double>(total / static_cast<long double>(labels.size()));
}

void check_model(Suite& s)
{
    auto& rng = s.rng();
    const std::uint64_t init_seed = rng();
    SleepModel model(ModelConfig::toy(), init_seed);
    for (auto& block : model.blocks()) {
        condition_block(block, rng);
    }
    const NdArray x = random_array({2, 1, kSamplesPerEpoch}, rng, 1.0);
    // Labels are the classes the model currently ranks lowest: a confidently
    // wrong prediction keeps the loss gradient O(1) through every layer.
    std::vector<std::size_t> labels(2);
    {
        Rng drop(7);
        const NdArray logits = model.forward(x, nn::Mode::Train, drop);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const double* row = logits.data() + i * kNumStages;
            labels[i] = static_cast<std::size_t>(std::min_element(row, row + kNumStages) - row);
        }
    }
    FocalConfig focal;
    focal.alpha = {1.2, 0.8, 1.0, 1.5, 0.5};

    // The network runs in double; only the final focal reduction of the
    // difference quotient is evaluated in long double, which removes the few-ulp
    // rounding of the loss that otherwise dominates coordinates near 1e-7.
    const auto loss_of = [&](SleepModel& m) {
        Rng drop(7);
        const NdArray logits = m.forward(x, nn::Mode::Train, drop);
        return focal_loss_extended(logits, labels, focal);
    };

    model.zero_grad();
    {
        Rng drop(7);
        ModelCache cache;
        const NdArray logits = model.forward(x, nn::Mode::Train, drop, &cache);
        model.backward(cache, focal_loss(logits, labels, focal).grad);
    }
    auto params = model.parameters();
    for (auto* p : params) {
        const NdArray original = p->value;
        const ScalarFunction f = [&](std::span<const double> v) {
            std::copy(v.begin(), v.end(), p->value.data());
            return loss_of(model);
        };
        s.scalar("model." + p->name, original, f, p->grad);
        p->value = original;
    }
}

} // namespace

std::vector<GradCheckReport> run_gradient_suite(const GradientSuiteOptions& options,
    const std::function<void(const GradCheckReport&)>& on_report)
{
    Suite s(options, on_report);
    check_primitives(s);
    check_afm(s);
    check_scan(s);
    check_bimamba(s);
    check_focal(s);
    if (options.include_model) {
        check_model(s);
    }
    return s.take();
}

} // namespace bimamsleep
