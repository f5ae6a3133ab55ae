#pragma once

#include "bimamsleep/bimamba.hpp"
#include "bimamsleep/feature_extractor.hpp"
#include "bimamsleep/ops.hpp"
#include "bimamsleep/random.hpp"
#include "bimamsleep/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bimamsleep {

struct ModelConfig {
    std::string preset = "desk";
    TrcnnConfig trcnn = desk_trcnn();
    std::size_t afm_reduction = 4;
    MambaConfig mamba{32, 2, 8, 4, FusionMode::GatedResidual, MambaVariant::BiMamba};
    std::size_t num_blocks = 1;
    std::size_t num_classes = 5;

    // full:  64/128/128 channels per branch, d_model 128, N 16.
    // desk:  8/16/16 channels, d_model 32, N 8 (the tested configuration).
    // toy:   2/4/4 channels, T' = 12, d_model 8, N 4 (gradient checks).
    static ModelConfig full();
    static ModelConfig desk();
    static ModelConfig toy();
    static ModelConfig from_preset(const std::string& name); // ConfigError on unknown name

    std::size_t feature_channels() const { return trcnn_output_channels(trcnn); }
    std::size_t sequence_length() const { return trcnn_output_length(trcnn); }
    void validate() const; // ConfigError

    bool operator==(const ModelConfig&) const = default;
};

struct ModelCache {
    TrcnnCache trcnn;
    AfmCache afm;
    NdArray sequence; // [B,T',C]
    std::vector<BlockCache> blocks;
    NdArray pooled; // [B,d_model]
};

struct ModelSnapshot {
    std::vector<NdArray> values;
    std::vector<nn::BatchNormState> batch_norm;
};

/// TRCNN -> AFM -> input projection -> BiMamba block(s) -> mean over time -> linear head.
class SleepModel {
public:
    SleepModel(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return cfg_; }
    ModelConfig& mutable_config() noexcept { return cfg_; }

    /// x [B,1,3000] -> logits [B,num_classes].
    NdArray forward(const NdArray& x, nn::Mode mode, Rng& rng, ModelCache* cache = nullptr);
    /// Accumulates parameter gradients from dL/dlogits.
    void backward(const ModelCache& cache, const NdArray& dlogits);

    std::vector<std::size_t> predict(const NdArray& x);

    std::vector<ParamTensor*> parameters();
    std::vector<nn::BatchNormState*> batch_norm_states();
    void zero_grad();
    std::size_t parameter_count();

    ModelSnapshot snapshot();
    void restore(const ModelSnapshot& s);

    // JSON parameter file: {"format":"bimamsleep-model","version":1,"config":{...},"tensors":[...]}.
    std::string to_json();
    static SleepModel from_json(const std::string& text); // ConfigError when malformed
    void save(const std::filesystem::path& path);
    static SleepModel load(const std::filesystem::path& path);

    // Direct access for tests.
    TrcnnParams& trcnn() noexcept { return trcnn_; }
    AfmParams& afm() noexcept { return afm_; }
    std::vector<BlockParams>& blocks() noexcept { return blocks_; }

private:
    ModelConfig cfg_;
    TrcnnParams trcnn_;
    AfmParams afm_;
    ParamTensor in_w_;
    ParamTensor in_b_;
    std::vector<BlockParams> blocks_;
    ParamTensor head_w_;
    ParamTensor head_b_;
};

// Gathers the given rows of a row-major [n, 3000] sample buffer into [rows.size(), 1, 3000].
NdArray make_batch(const float* samples, std::span<const std::size_t> rows);
NdArray make_batch(const double* samples, std::span<const std::size_t> rows);

} // namespace bimamsleep
