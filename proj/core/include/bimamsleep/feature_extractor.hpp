#pragma once

#include "bimamsleep/ops.hpp"
#include "bimamsleep/random.hpp"
#include "bimamsleep/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace bimamsleep {

struct PoolSpec {
    std::size_t window = 2;
    std::size_t stride = 2;
};

/// One CNN unit of the triple-resolution front end:
///   conv(kernel_size, stride) -> BN -> GELU -> pool[0] -> dropout
///   -> [conv(inner_kernel) -> BN -> GELU -> pool[i]] for i = 1, 2
/// Convolutions carry no bias (each is followed by batch-norm).
struct BranchConfig {
    std::size_t kernel_size = 50;
    std::size_t stride = 6;
    std::size_t padding = 24;
    std::vector<std::size_t> channel_plan{64, 128, 128};
    std::size_t inner_kernel = 8;
    std::size_t inner_padding = 4;
    std::vector<PoolSpec> pools{{8, 2}, {4, 4}, {4, 4}};
    double dropout_p = 0.5;

    bool operator==(const BranchConfig&) const = default;
};

inline bool operator==(const PoolSpec& a, const PoolSpec& b)
{
    return a.window == b.window && a.stride == b.stride;
}

// Throws ConfigError on an inadmissible configuration (including T' < 4).
void validate_branch(const BranchConfig& cfg, std::size_t input_length = 3000);
std::size_t branch_output_length(const BranchConfig& cfg, std::size_t input_length = 3000);
inline std::size_t branch_output_channels(const BranchConfig& cfg) { return cfg.channel_plan.back(); }

struct TrcnnConfig {
    std::array<BranchConfig, 3> branches;
    bool operator==(const TrcnnConfig&) const = default;
};

// Presets. The full preset uses 64/128/128 channels per branch; the desk
// preset keeps the same geometry (T' = 15) with 8/16/16 channels; the toy
// preset is sized for exhaustive gradient checks (T' = 12, 2/4/4 channels).
TrcnnConfig full_trcnn();
TrcnnConfig desk_trcnn();
TrcnnConfig toy_trcnn();

std::size_t trcnn_output_length(const TrcnnConfig& cfg);
std::size_t trcnn_output_channels(const TrcnnConfig& cfg);

// ---------------------------------------------------------------------------

struct BranchParams {
    std::array<ParamTensor, 3> conv_w;
    std::array<ParamTensor, 3> bn_gamma;
    std::array<ParamTensor, 3> bn_beta;
    std::array<nn::BatchNormState, 3> bn;

    static BranchParams init(const BranchConfig& cfg, const std::string& prefix, Rng& rng);
    std::vector<ParamTensor*> parameters();
};

struct BranchCache {
    struct Stage {
        NdArray input;
        nn::BatchNormCache bn;
        NdArray pre_activation;
        Shape pool_input_shape;
        std::vector<std::size_t> pool_argmax;
    };
    std::array<Stage, 3> stages;
    NdArray dropout_mask;
};

/// x [B,1,3000] -> [B, channel_plan.back(), T'].
NdArray branch_forward(const NdArray& x, const BranchConfig& cfg, BranchParams& params, nn::Mode mode,
    Rng& rng, BranchCache* cache = nullptr);

/// Accumulates parameter gradients; returns dx when need_dx is set.
NdArray branch_backward(const BranchCache& cache, const BranchConfig& cfg, BranchParams& params,
    const NdArray& dy, bool need_dx = false);

struct TrcnnParams {
    std::array<BranchParams, 3> branches;

    static TrcnnParams init(const TrcnnConfig& cfg, Rng& rng);
    std::vector<ParamTensor*> parameters();
};

struct TrcnnCache {
    std::array<BranchCache, 3> branches;
};

/// Runs the three branches and concatenates along channels: [B, sum C_i, T'].
NdArray trcnn_forward(const NdArray& x, const TrcnnConfig& cfg, TrcnnParams& params, nn::Mode mode,
    Rng& rng, TrcnnCache* cache = nullptr);
void trcnn_backward(const TrcnnCache& cache, const TrcnnConfig& cfg, TrcnnParams& params, const NdArray& dy);

// ---------------------------------------------------------------------------
// Adaptive feature modules: squeeze (global average over time), excite
// (two-layer gate, ReLU then Sigmoid), scale (channel gate plus shortcut).

// SE reduction ratio: 16, or 4 when there are fewer than 64 channels.
std::size_t afm_default_reduction(std::size_t channels);

struct AfmParams {
    ParamTensor w1; // [C/r, C]
    ParamTensor w2; // [C, C/r]
    std::size_t reduction = 16;

    static AfmParams init(std::size_t channels, std::size_t reduction, Rng& rng);
    std::vector<ParamTensor*> parameters();
};

NdArray feature_squeeze(const NdArray& x);
NdArray feature_squeeze_backward(const Shape& x_shape, const NdArray& dz);

struct ExciteCache {
    NdArray z;
    NdArray hidden_pre;
    NdArray hidden;
    NdArray gate_pre;
};

NdArray feature_excite(const NdArray& z, const AfmParams& p, ExciteCache* cache = nullptr);
NdArray feature_excite_backward(const ExciteCache& cache, AfmParams& p, const NdArray& ds);

// out[b,c,t] = x[b,c,t] * s[b,c] + x[b,c,t]
NdArray feature_scale(const NdArray& x, const NdArray& s);

struct ScaleGrads {
    NdArray dx;
    NdArray ds;
};
ScaleGrads feature_scale_backward(const NdArray& x, const NdArray& s, const NdArray& dy);

struct AfmCache {
    NdArray x;
    ExciteCache excite;
    NdArray gate;
};

NdArray afm_forward(const NdArray& x, const AfmParams& p, AfmCache* cache = nullptr);
NdArray afm_backward(const AfmCache& cache, AfmParams& p, const NdArray& dy);

} // namespace bimamsleep
