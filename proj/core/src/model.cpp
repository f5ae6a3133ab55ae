#include "bimamsleep/model.hpp"

#include "bimamsleep/error.hpp"
#include "bimamsleep/signal_io.hpp"
#include "json_config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace bimamsleep {

ModelConfig ModelConfig::full()
{
    ModelConfig c;
    c.preset = "full";
    c.trcnn = full_trcnn();
    c.afm_reduction = afm_default_reduction(c.feature_channels());
    c.mamba = MambaConfig{128, 2, 16, 4, FusionMode::GatedResidual, MambaVariant::BiMamba};
    return c;
}

ModelConfig ModelConfig::desk()
{
    ModelConfig c;
    c.preset = "desk";
    c.trcnn = desk_trcnn();
    c.afm_reduction = afm_default_reduction(c.feature_channels());
    c.mamba = MambaConfig{32, 2, 8, 4, FusionMode::GatedResidual, MambaVariant::BiMamba};
    return c;
}

ModelConfig ModelConfig::toy()
{
    ModelConfig c;
    c.preset = "toy";
    c.trcnn = toy_trcnn();
    c.afm_reduction = afm_default_reduction(c.feature_channels());
    c.mamba = MambaConfig{8, 2, 4, 4, FusionMode::GatedResidual, MambaVariant::BiMamba};
    return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name)
{
    if (name == "full") {
        return full();
    }
    if (name == "desk") {
        return desk();
    }
    if (name == "toy") {
        return toy();
    }
    throw ConfigError("unknown model preset '" + name + "' (expected full, desk or toy)");
}

void ModelConfig::validate() const
{
    for (const auto& b : trcnn.branches) {
        validate_branch(b);
    }
    trcnn_output_length(trcnn);
    const auto c = feature_channels();
    if (afm_reduction == 0 || c % afm_reduction != 0) {
        throw ConfigError("model.afm_reduction " + std::to_string(afm_reduction) + " must divide the "
            + std::to_string(c) + " feature channels");
    }
    mamba.validate();
    if (num_classes != kNumStages) {
        throw ConfigError("model.num_classes must be " + std::to_string(kNumStages));
    }
}

// ---------------------------------------------------------------------------

namespace {

NdArray uniform_array(Shape shape, double bound, Rng& rng)
{
    NdArray w(std::move(shape));
    for (auto& v : w.values()) {
        v = uniform(rng, -bound, bound);
    }
    return w;
}

} // namespace

SleepModel::SleepModel(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg))
{
    cfg_.validate();
    Rng rng(seed);
    trcnn_ = TrcnnParams::init(cfg_.trcnn, rng);
    const auto c = cfg_.feature_channels();
    const auto dm = cfg_.mamba.d_model;
    afm_ = AfmParams::init(c, cfg_.afm_reduction, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(c));
    in_w_ = ParamTensor("in_proj.w", uniform_array({dm, c}, bound, rng));
    in_b_ = ParamTensor("in_proj.b", uniform_array({dm}, bound, rng));
    for (std::size_t i = 0; i < cfg_.num_blocks; ++i) {
        blocks_.push_back(BlockParams::init(cfg_.mamba, "block" + std::to_string(i), rng));
    }
    const double hb = 1.0 / std::sqrt(static_cast<double>(dm));
    head_w_ = ParamTensor("head.w", uniform_array({cfg_.num_classes, dm}, hb, rng));
    head_b_ = ParamTensor("head.b", uniform_array({cfg_.num_classes}, hb, rng));
}

NdArray SleepModel::forward(const NdArray& x, nn::Mode mode, Rng& rng, ModelCache* cache)
{
    NdArray feats = trcnn_forward(x, cfg_.trcnn, trcnn_, mode, rng, cache != nullptr ? &cache->trcnn : nullptr);
    feats = afm_forward(feats, afm_, cache != nullptr ? &cache->afm : nullptr);
    NdArray seq = feats.transposed12();
    NdArray h = nn::linear(seq, in_w_.value, in_b_.value);
    if (cache != nullptr) {
        cache->sequence = std::move(seq);
        cache->blocks.assign(blocks_.size(), BlockCache{});
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        h = bimamba_block(h, blocks_[i], cfg_.mamba, cache != nullptr ? &cache->blocks[i] : nullptr);
    }
    const auto batch = h.dim(0);
    const auto length = h.dim(1);
    const auto dm = h.dim(2);
    NdArray pooled({batch, dm});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < length; ++t) {
            for (std::size_t k = 0; k < dm; ++k) {
                pooled[b * dm + k] += h[(b * length + t) * dm + k];
            }
        }
    }
    for (auto& v : pooled.values()) {
        v /= static_cast<double>(length);
    }
    NdArray logits = nn::linear(pooled, head_w_.value, head_b_.value);
    if (cache != nullptr) {
        cache->pooled = std::move(pooled);
    }
    return logits;
}

void SleepModel::backward(const ModelCache& cache, const NdArray& dlogits)
{
    auto hg = nn::linear_backward(cache.pooled, head_w_.value, true, dlogits);
    add_inplace(head_w_.grad, hg.dw);
    add_inplace(head_b_.grad, hg.db);

    const auto batch = cache.sequence.dim(0);
    const auto length = cache.sequence.dim(1);
    const auto dm = cfg_.mamba.d_model;
    NdArray dh({batch, length, dm});
    const double inv = 1.0 / static_cast<double>(length);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < length; ++t) {
            for (std::size_t k = 0; k < dm; ++k) {
                dh[(b * length + t) * dm + k] = hg.dx[b * dm + k] * inv;
            }
        }
    }
    for (std::size_t i = blocks_.size(); i-- > 0;) {
        dh = bimamba_block_backward(cache.blocks[i], blocks_[i], cfg_.mamba, dh);
    }
    auto ig = nn::linear_backward(cache.sequence, in_w_.value, true, dh);
    add_inplace(in_w_.grad, ig.dw);
    add_inplace(in_b_.grad, ig.db);
    const NdArray dfeat = afm_backward(cache.afm, afm_, ig.dx.transposed12());
    trcnn_backward(cache.trcnn, cfg_.trcnn, trcnn_, dfeat);
}

std::vector<std::size_t> SleepModel::predict(const NdArray& x)
{
    Rng unused(0);
    const NdArray logits = forward(x, nn::Mode::Eval, unused);
    const auto n = logits.dim(0);
    const auto c = logits.dim(1);
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (logits[i * c + j] > logits[i * c + best]) {
                best = j;
            }
        }
        out[i] = best;
    }
    return out;
}

std::vector<ParamTensor*> SleepModel::parameters()
{
    std::vector<ParamTensor*> out = trcnn_.parameters();
    for (auto* p : afm_.parameters()) {
        out.push_back(p);
    }
    out.push_back(&in_w_);
    out.push_back(&in_b_);
    for (auto& b : blocks_) {
        for (auto* p : b.parameters()) {
            out.push_back(p);
        }
    }
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
}

std::vector<nn::BatchNormState*> SleepModel::batch_norm_states()
{
    std::vector<nn::BatchNormState*> out;
    for (auto& b : trcnn_.branches) {
        for (auto& s : b.bn) {
            out.push_back(&s);
        }
    }
    return out;
}

void SleepModel::zero_grad()
{
    for (auto* p : parameters()) {
        p->zero_grad();
    }
}

std::size_t SleepModel::parameter_count()
{
    std::size_t n = 0;
    for (auto* p : parameters()) {
        n += p->value.size();
    }
    return n;
}

ModelSnapshot SleepModel::snapshot()
{
    ModelSnapshot s;
    for (auto* p : parameters()) {
        s.values.push_back(p->value);
    }
    for (auto* b : batch_norm_states()) {
        s.batch_norm.push_back(*b);
    }
    return s;
}

void SleepModel::restore(const ModelSnapshot& s)
{
    auto params = parameters();
    auto bns = batch_norm_states();
    if (s.values.size() != params.size() || s.batch_norm.size() != bns.size()) {
        throw ShapeError("SleepModel::restore: snapshot does not match the model layout");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (s.values[i].shape() != params[i]->value.shape()) {
            throw ShapeError("SleepModel::restore: shape mismatch for " + params[i]->name);
        }
        params[i]->value = s.values[i];
    }
    for (std::size_t i = 0; i < bns.size(); ++i) {
        *bns[i] = s.batch_norm[i];
    }
}

// ---------------------------------------------------------------------------

namespace {

using detail::json;

json tensor_json(const std::string& name, const NdArray& a)
{
    return json{{"name", name}, {"shape", a.shape()}, {"data", std::vector<double>(a.values().begin(), a.values().end())}};
}

NdArray tensor_from_json(const json& t, const std::string& expected_name, const Shape& expected_shape)
{
    if (!t.is_object() || !t.contains("name") || !t.contains("shape") || !t.contains("data")) {
        throw ConfigError("model file: tensor entry for '" + expected_name + "' is malformed");
    }
    if (!t["name"].is_string() || t["name"].get<std::string>() != expected_name) {
        throw ConfigError("model file: expected tensor '" + expected_name + "'");
    }
    Shape shape;
    std::vector<double> data;
    try {
        shape = t["shape"].get<Shape>();
        data = t["data"].get<std::vector<double>>();
    } catch (const json::exception&) {
        throw ConfigError("model file: tensor '" + expected_name + "' has a malformed shape or data array");
    }
    if (shape != expected_shape || data.size() != shape_numel(shape)) {
        throw ConfigError("model file: tensor '" + expected_name + "' has shape " + shape_to_string(shape)
            + ", expected " + shape_to_string(expected_shape));
    }
    NdArray a(std::move(shape), std::move(data));
    if (!a.all_finite()) {
        throw ConfigError("model file: tensor '" + expected_name + "' contains non-finite values");
    }
    return a;
}

} // namespace

std::string SleepModel::to_json()
{
    json tensors = json::array();
    for (auto* p : parameters()) {
        tensors.push_back(tensor_json(p->name, p->value));
    }
    const auto bns = batch_norm_states();
    for (std::size_t i = 0; i < bns.size(); ++i) {
        tensors.push_back(tensor_json("bn" + std::to_string(i) + ".running_mean", bns[i]->running_mean));
        tensors.push_back(tensor_json("bn" + std::to_string(i) + ".running_var", bns[i]->running_var));
    }
    json j{{"format", "bimamsleep-model"}, {"version", 1}, {"config", detail::model_config_to_json(cfg_)},
        {"tensors", tensors}};
    return j.dump();
}

SleepModel SleepModel::from_json(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("model file: invalid JSON (") + e.what() + ")");
    }
    if (!j.is_object() || j.value("format", std::string()) != "bimamsleep-model") {
        throw ConfigError("model file: missing format tag 'bimamsleep-model'");
    }
    if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != 1) {
        throw ConfigError("model file: unsupported version");
    }
    if (!j.contains("config") || !j.contains("tensors") || !j["tensors"].is_array()) {
        throw ConfigError("model file: missing 'config' or 'tensors'");
    }
    SleepModel model(detail::model_config_from_json(j["config"]), 0);
    const auto& tensors = j["tensors"];
    auto params = model.parameters();
    auto bns = model.batch_norm_states();
    if (tensors.size() != params.size() + 2 * bns.size()) {
        throw ConfigError("model file: expected " + std::to_string(params.size() + 2 * bns.size())
            + " tensors, found " + std::to_string(tensors.size()));
    }
    std::size_t k = 0;
    for (auto* p : params) {
        p->value = tensor_from_json(tensors[k++], p->name, p->value.shape());
    }
    for (std::size_t i = 0; i < bns.size(); ++i) {
        const auto tag = "bn" + std::to_string(i);
        bns[i]->running_mean = tensor_from_json(tensors[k++], tag + ".running_mean", bns[i]->running_mean.shape());
        bns[i]->running_var = tensor_from_json(tensors[k++], tag + ".running_var", bns[i]->running_var.shape());
    }
    return model;
}

void SleepModel::save(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write model file " + path.string());
    }
    out << to_json();
    if (!out) {
        throw Error("failed writing model file " + path.string());
    }
}

SleepModel SleepModel::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open model file " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return from_json(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
NdArray gather(const T* samples, std::span<const std::size_t> rows)
{
    NdArray x({rows.size(), 1, kSamplesPerEpoch});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const T* src = samples + rows[i] * kSamplesPerEpoch;
        double* dst = x.data() + i * kSamplesPerEpoch;
        for (std::size_t k = 0; k < kSamplesPerEpoch; ++k) {
            dst[k] = static_cast<double>(src[k]);
        }
    }
    return x;
}

} // namespace

NdArray make_batch(const float* samples, std::span<const std::size_t> rows)
{
    return gather(samples, rows);
}

NdArray make_batch(const double* samples, std::span<const std::size_t> rows)
{
    return gather(samples, rows);
}

} // namespace bimamsleep
