#pragma once

#include "bimamsleep/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace bimamsleep {

// ---------------------------------------------------------------------------
// Zero-order-hold discretization of h' = A h + B x.

struct ZohResult {
    NdArray a_bar; // [N] for diagonal A, [N,N] for dense A
    NdArray b_bar; // [N]
};

/// A given as a rank-1 array is the diagonal of A; rank-2 is a dense [N,N]
/// matrix. dt must be positive. Throws NumericError on a non-finite result.
ZohResult zoh_discretize(const NdArray& a, const NdArray& b, double dt);

// exp(M) by scaling and squaring with a Taylor core; M is [N,N].
NdArray matrix_exp(const NdArray& m);

// ---------------------------------------------------------------------------
// Generic time-varying diagonal scan:
//   h_t = a_bar_t (.) h_{t-1} + b_bar_t * x_t,   y_t[d] = sum_n c_t[n] h_t[d,n]

struct DiscreteSsm {
    NdArray a_bar; // [B,L,D,N]
    NdArray b_bar; // [B,L,D,N]
    NdArray c;     // [B,L,N]

    // Time-invariant parameters shared by every channel and batch row.
    static DiscreteSsm broadcast(std::size_t batch, std::size_t length, std::size_t channels,
        std::span<const double> a_bar, std::span<const double> b_bar, std::span<const double> c);
};

/// x [B,L,D] -> y [B,L,D]. When states is non-null it receives h_t as [B,L,D,N].
/// Throws NumericError naming the first timestep whose state is non-finite.
NdArray ssm_scan(const NdArray& x, const DiscreteSsm& p, NdArray* states = nullptr);

/// K_j = sum_n c[n] a_bar[n]^j b_bar[n] for j < length (diagonal static SSM).
std::vector<double> ssm_kernel(std::span<const double> a_bar, std::span<const double> b_bar,
    std::span<const double> c, std::size_t length);

// y_t = sum_{j<=t} k_j x_{t-j}
std::vector<double> causal_convolve(std::span<const double> x, std::span<const double> kernel);

// ---------------------------------------------------------------------------
// Fused selective scan (discretization inside the loop, so the working set is
// one [D,N] state per batch row):
//   a_bar = exp(delta[b,t,d] * a[d,n]),  b_bar = delta[b,t,d] * bt[b,t,n]

struct SelectiveScanCache {
    NdArray h; // [B,L,D,N]
};

NdArray selective_scan(const NdArray& xd, const NdArray& delta, const NdArray& a, const NdArray& bt,
    const NdArray& ct, SelectiveScanCache* cache = nullptr);

struct SelectiveScanGrads {
    NdArray dxd;    // [B,L,D]
    NdArray ddelta; // [B,L,D]
    NdArray da;     // [D,N]
    NdArray dbt;    // [B,L,N]
    NdArray dct;    // [B,L,N]
};

SelectiveScanGrads selective_scan_backward(const SelectiveScanCache& cache, const NdArray& xd, const NdArray& delta,
    const NdArray& a, const NdArray& bt, const NdArray& ct, const NdArray& dy);

} // namespace bimamsleep
