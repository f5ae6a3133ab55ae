#pragma once

#include "bimamsleep/ops.hpp"
#include "bimamsleep/random.hpp"
#include "bimamsleep/ssm.hpp"
#include "bimamsleep/tensor.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bimamsleep {

// GatedResidual: out_proj(y_fwd * SiLU(z) + y_bwd * SiLU(z)) + x.
// Average: out_proj(0.5 * (y_fwd + y_bwd)), no gate and no residual.
enum class FusionMode { GatedResidual, Average };

// Which scan directions contribute to the fused output.
enum class MambaVariant { BiMamba, FwdOnly, BwdOnly, NoMamba };

enum class Direction { Forward, Backward };

std::string_view fusion_mode_name(FusionMode m);
std::optional<FusionMode> parse_fusion_mode(std::string_view s);
std::string_view variant_name(MambaVariant v);
std::optional<MambaVariant> parse_variant(std::string_view s);

struct MambaConfig {
    std::size_t d_model = 128;
    std::size_t expand = 2;
    std::size_t state_size = 16;
    std::size_t conv_width = 4;
    FusionMode fusion = FusionMode::GatedResidual;
    MambaVariant variant = MambaVariant::BiMamba;

    std::size_t d_inner() const noexcept { return expand * d_model; }
    void validate() const; // ConfigError
    bool operator==(const MambaConfig&) const = default;
};

struct DirectionParams {
    ParamTensor conv_w; // [D, W] depthwise causal taps, oldest first
    ParamTensor conv_b; // [D]
    ParamTensor w_dt;   // [D, D]
    ParamTensor b_dt;   // [D]
    ParamTensor w_b;    // [N, D]
    ParamTensor w_c;    // [N, D]
    ParamTensor a_log;  // [D, N], A = -exp(a_log)

    static DirectionParams init(const MambaConfig& cfg, const std::string& prefix, Rng& rng);
    std::vector<ParamTensor*> parameters();
};

struct BlockParams {
    ParamTensor ln_gamma; // [d_model]
    ParamTensor ln_beta;  // [d_model]
    ParamTensor w_in_x;   // [D, d_model]
    ParamTensor w_in_z;   // [D, d_model]
    DirectionParams fwd;
    DirectionParams bwd;
    ParamTensor w_out; // [d_model, D]
    ParamTensor b_out; // [d_model]

    static BlockParams init(const MambaConfig& cfg, const std::string& prefix, Rng& rng);
    std::vector<ParamTensor*> parameters();
};

// ---------------------------------------------------------------------------

struct SsmParams {
    NdArray delta; // [B,L,D], strictly positive
    NdArray b;     // [B,L,N]
    NdArray c;     // [B,L,N]
};

/// delta = softplus(xd W_dt^T + b_dt); B_t = xd W_B^T; C_t = xd W_C^T.
SsmParams selective_params(const NdArray& xd, const DirectionParams& p);

// a_bar = exp(delta (x) A), b_bar = delta (x) B_t (elementwise discretization).
DiscreteSsm discretize_selective(const SsmParams& sp, const NdArray& a);

// -exp(a_log)
NdArray state_matrix(const NdArray& a_log);

// y_t[d] = b[d] + sum_k w[d,k] x_{t-W+1+k}[d] with zeros before t = 0.
NdArray causal_depthwise_conv(const NdArray& x, const NdArray& w, const NdArray& b);

struct DirectionCache {
    NdArray input;    // time-ordered as processed (reversed for Backward)
    NdArray conv_out; // pre-SiLU
    NdArray xd;
    NdArray dt_pre;
    SsmParams ssm;
    NdArray a;
    SelectiveScanCache scan;
};

/// Backward direction = reverse(machinery(reverse(x))) with its own parameters.
NdArray direction_forward(const NdArray& x_proj, Direction dir, const DirectionParams& p,
    DirectionCache* cache = nullptr);
NdArray direction_backward(const DirectionCache& cache, Direction dir, DirectionParams& p, const NdArray& dy);

// Reverses the time axis of [B,L,...].
NdArray reverse_time(const NdArray& x);

struct BlockCache {
    NdArray x;
    nn::LayerNormCache ln;
    NdArray x_norm;
    NdArray x_proj;
    NdArray z;
    NdArray gate; // SiLU(z); empty in Average mode
    DirectionCache fwd;
    DirectionCache bwd;
    NdArray y_fwd_raw;
    NdArray y_bwd_raw;
    NdArray fused; // input of the output projection
};

/// x [B,L,d_model] -> [B,L,d_model].
NdArray bimamba_block(const NdArray& x, const BlockParams& p, const MambaConfig& cfg, BlockCache* cache = nullptr);
NdArray bimamba_block_backward(const BlockCache& cache, BlockParams& p, const MambaConfig& cfg, const NdArray& dy);

} // namespace bimamsleep
