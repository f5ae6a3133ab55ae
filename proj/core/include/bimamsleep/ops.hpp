#pragma once

#include "bimamsleep/random.hpp"
#include "bimamsleep/tensor.hpp"

#include <cstddef>
#include <vector>

/// Differentiable layer kernels. Every forward op has a matching *_backward
/// that returns the input gradient and the parameter gradients; callers own
/// the caches. Conventions follow the usual deep-learning layouts:
/// sequences are [B, C, L] for convolution/pooling/batch-norm and [..., D]
/// (feature axis last) for linear/layer-norm/softmax.
namespace bimamsleep::nn {

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// conv1d: cross-correlation. x [B,Cin,L], w [Cout,Cin,K], b [Cout] or empty.

NdArray conv1d(const NdArray& x, const NdArray& w, const NdArray& b, std::size_t stride,
    std::size_t padding);

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
    std::size_t padding);

struct Conv1dGrads {
    NdArray dx; // empty when not requested
    NdArray dw;
    NdArray db; // empty when the forward had no bias
};

Conv1dGrads conv1d_backward(const NdArray& x, const NdArray& w, bool has_bias, const NdArray& dy,
    std::size_t stride, std::size_t padding, bool need_dx = true);

// ---------------------------------------------------------------------------
// batchnorm1d over (B, L) per channel.

struct BatchNormState {
    NdArray running_mean;
    NdArray running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels);
};

struct BatchNormCache {
    NdArray x_hat;
    std::vector<double> inv_std;
    Mode mode = Mode::Train;
};

NdArray batchnorm1d(const NdArray& x, const NdArray& gamma, const NdArray& beta,
    BatchNormState& state, Mode mode, BatchNormCache* cache = nullptr);

struct BatchNormGrads {
    NdArray dx;
    NdArray dgamma;
    NdArray dbeta;
};

BatchNormGrads batchnorm1d_backward(const BatchNormCache& cache, const NdArray& gamma,
    const NdArray& dy);

// ---------------------------------------------------------------------------
// Elementwise activations.

enum class Activation { GELU, SiLU, ReLU, Sigmoid, Softplus };

const char* activation_name(Activation kind);
double activate(Activation kind, double x);
double activate_derivative(Activation kind, double x);

NdArray activation(const NdArray& x, Activation kind);
NdArray activation_backward(const NdArray& x, const NdArray& dy, Activation kind);

// ---------------------------------------------------------------------------
// maxpool1d over the last axis of [B,C,L]. Ties route to the first maximum.

struct MaxPoolResult {
    NdArray out;
    std::vector<std::size_t> argmax; // flat input index per output element
};

std::size_t maxpool1d_output_length(std::size_t length, std::size_t window, std::size_t stride);
MaxPoolResult maxpool1d(const NdArray& x, std::size_t window, std::size_t stride);
NdArray maxpool1d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
    const NdArray& dy);

// ---------------------------------------------------------------------------
// linear over the last axis: x [...,Din], w [Dout,Din], b [Dout] or empty.

NdArray linear(const NdArray& x, const NdArray& w, const NdArray& b);

struct LinearGrads {
    NdArray dx;
    NdArray dw;
    NdArray db;
};

LinearGrads linear_backward(const NdArray& x, const NdArray& w, bool has_bias, const NdArray& dy,
    bool need_dx = true);

// ---------------------------------------------------------------------------
// layer_norm over the last axis.

struct LayerNormCache {
    NdArray x_hat;
    std::vector<double> inv_std;
};

NdArray layer_norm(const NdArray& x, const NdArray& gamma, const NdArray& beta, double eps = 1e-5,
    LayerNormCache* cache = nullptr);

struct LayerNormGrads {
    NdArray dx;
    NdArray dgamma;
    NdArray dbeta;
};

LayerNormGrads layer_norm_backward(const LayerNormCache& cache, const NdArray& gamma,
    const NdArray& dy);

// ---------------------------------------------------------------------------
// Inverted dropout. The mask stores the multiplier per element (0 or 1/(1-p));
// it is empty when the op is the identity (eval mode or p == 0).

struct DropoutResult {
    NdArray out;
    NdArray mask;
};

DropoutResult dropout(const NdArray& x, double p, Mode mode, Rng& rng);
NdArray dropout_backward(const NdArray& mask, const NdArray& dy);

// ---------------------------------------------------------------------------

NdArray softmax(const NdArray& x);
// y is the softmax output.
NdArray softmax_backward(const NdArray& y, const NdArray& dy);

} // namespace bimamsleep::nn
