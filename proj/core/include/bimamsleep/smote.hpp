#pragma once

#include "bimamsleep/random.hpp"
#include "bimamsleep/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace bimamsleep {

struct SmoteConfig {
    bool enabled = true;
    std::size_t k_neighbors = 5;
    std::size_t m_danger = 10;
    // Every class is grown to llround(target_ratio * majority count) when smaller.
    double target_ratio = 1.0;
    std::uint64_t seed = 0;

    void validate() const; // ConfigError
    bool operator==(const SmoteConfig&) const = default;
};

// Provenance of one synthetic row: base + u * (partner - base).
struct SyntheticOrigin {
    std::size_t base = 0;
    std::size_t partner = 0;
    double u = 0.0;
};

struct SmoteResult {
    NdArray features;                  // [n + s, d]; the first n rows are the input, untouched
    std::vector<std::size_t> labels;   // n + s
    std::vector<SyntheticOrigin> origins; // s
};

/// Borderline-SMOTE (variant 1). A minority point is in DANGER when
/// m/2 <= (other-class points among its m nearest neighbours) < m. New rows
/// interpolate between a DANGER point and one of its k nearest same-class
/// neighbours, cycling through the DANGER set in index order. Classes with
/// fewer than k+1 members are skipped with a warning; a class whose DANGER set
/// is empty falls back to all of its members (also warned).
SmoteResult borderline_smote(const NdArray& features, std::span<const std::size_t> labels, std::size_t num_classes,
    const SmoteConfig& cfg, Rng& rng);

} // namespace bimamsleep
