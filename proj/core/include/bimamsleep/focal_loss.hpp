#pragma once

#include "bimamsleep/signal_io.hpp"
#include "bimamsleep/tensor.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace bimamsleep {

struct FocalConfig {
    double gamma = 2.0;
    std::vector<double> alpha{1.0, 1.0, 1.0, 1.0, 1.0}; // one weight per class

    void validate(std::size_t num_classes) const; // ConfigError
    bool operator==(const FocalConfig&) const = default;
};

struct FocalResult {
    double loss = 0.0;
    NdArray grad; // dloss/dlogits, [N,C]
};

/// loss = -(1/N) sum_i alpha[y_i] (1 - p_i)^gamma log p_i, p_i = softmax(logits_i)[y_i].
/// gamma = 0 with unit alpha is the mean softmax cross-entropy.
FocalResult focal_loss(const NdArray& logits, std::span<const std::size_t> labels, const FocalConfig& cfg);

/// alpha_c proportional to 1 / max(count_c, 1), rescaled to mean 1.
std::vector<double> alpha_from_frequencies(std::span<const std::size_t> counts);

} // namespace bimamsleep
