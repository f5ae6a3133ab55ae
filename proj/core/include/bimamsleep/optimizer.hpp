#pragma once

#include "bimamsleep/tensor.hpp"

#include <cstddef>
#include <vector>

namespace bimamsleep {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Holds first/second moments per parameter.
class Adam {
public:
    explicit Adam(std::vector<ParamTensor*> params, AdamConfig cfg = {});

    // Throws NumericError naming the parameter when a gradient is non-finite.
    void step(double lr);

    std::size_t step_count() const noexcept { return steps_; }
    const std::vector<NdArray>& first_moments() const noexcept { return m_; }
    const std::vector<NdArray>& second_moments() const noexcept { return v_; }

private:
    std::vector<ParamTensor*> params_;
    AdamConfig cfg_;
    std::vector<NdArray> m_;
    std::vector<NdArray> v_;
    std::size_t steps_ = 0;
};

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<ParamTensor*>& params, double max_norm);

} // namespace bimamsleep
