#include "json_config.hpp"

#include "bimamsleep/error.hpp"

#include <algorithm>

namespace bimamsleep::detail {

namespace {

std::string field(std::string_view where, const char* key)
{
    return std::string(where) + "." + key;
}

const json& require(const json& j, std::string_view where, const char* key)
{
    const auto it = j.find(key);
    if (it == j.end()) {
        throw ConfigError("missing field '" + field(where, key) + "'");
    }
    return *it;
}

} // namespace

void reject_unknown_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed)
{
    if (!j.is_object()) {
        throw ConfigError("'" + std::string(where) + "' must be an object");
    }
    for (const auto& item : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            throw ConfigError("unknown field '" + std::string(where) + "." + item.key() + "'");
        }
    }
}

double get_number(const json& j, std::string_view where, const char* key)
{
    const auto& v = require(j, where, key);
    if (!v.is_number()) {
        throw ConfigError("field '" + field(where, key) + "' must be a number");
    }
    return v.get<double>();
}

std::size_t get_count(const json& j, std::string_view where, const char* key)
{
    const auto& v = require(j, where, key);
    if (!v.is_number_unsigned()) {
        throw ConfigError("field '" + field(where, key) + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

bool get_bool(const json& j, std::string_view where, const char* key)
{
    const auto& v = require(j, where, key);
    if (!v.is_boolean()) {
        throw ConfigError("field '" + field(where, key) + "' must be true or false");
    }
    return v.get<bool>();
}

std::string get_string(const json& j, std::string_view where, const char* key)
{
    const auto& v = require(j, where, key);
    if (!v.is_string()) {
        throw ConfigError("field '" + field(where, key) + "' must be a string");
    }
    return v.get<std::string>();
}

namespace {

std::vector<std::size_t> get_counts(const json& j, std::string_view where, const char* key)
{
    const auto& v = require(j, where, key);
    if (!v.is_array()) {
        throw ConfigError("field '" + field(where, key) + "' must be an array of integers");
    }
    std::vector<std::size_t> out;
    for (const auto& e : v) {
        if (!e.is_number_unsigned()) {
            throw ConfigError("field '" + field(where, key) + "' must be an array of non-negative integers");
        }
        out.push_back(e.get<std::size_t>());
    }
    return out;
}

json branch_to_json(const BranchConfig& b)
{
    json pools = json::array();
    for (const auto& p : b.pools) {
        pools.push_back(json::array({p.window, p.stride}));
    }
    return json{{"kernel_size", b.kernel_size}, {"stride", b.stride}, {"padding", b.padding},
        {"channel_plan", b.channel_plan}, {"inner_kernel", b.inner_kernel}, {"inner_padding", b.inner_padding},
        {"pools", pools}, {"dropout_p", b.dropout_p}};
}

BranchConfig branch_from_json(const json& j, const std::string& where)
{
    reject_unknown_keys(j, where,
        {"kernel_size", "stride", "padding", "channel_plan", "inner_kernel", "inner_padding", "pools", "dropout_p"});
    BranchConfig b;
    b.kernel_size = get_count(j, where, "kernel_size");
    b.stride = get_count(j, where, "stride");
    b.padding = get_count(j, where, "padding");
    b.channel_plan = get_counts(j, where, "channel_plan");
    b.inner_kernel = get_count(j, where, "inner_kernel");
    b.inner_padding = get_count(j, where, "inner_padding");
    b.pools.clear();
    const auto& pools = require(j, where, "pools");
    if (!pools.is_array()) {
        throw ConfigError("field '" + where + ".pools' must be an array of [window, stride] pairs");
    }
    for (const auto& p : pools) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number_unsigned() || !p[1].is_number_unsigned()) {
            throw ConfigError("field '" + where + ".pools' must contain [window, stride] pairs");
        }
        b.pools.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>()});
    }
    b.dropout_p = get_number(j, where, "dropout_p");
    return b;
}

} // namespace

json model_config_to_json(const ModelConfig& cfg)
{
    json branches = json::array();
    for (const auto& b : cfg.trcnn.branches) {
        branches.push_back(branch_to_json(b));
    }
    return json{{"preset", cfg.preset}, {"branches", branches}, {"afm_reduction", cfg.afm_reduction},
        {"d_model", cfg.mamba.d_model}, {"expand", cfg.mamba.expand}, {"state_size", cfg.mamba.state_size},
        {"conv_width", cfg.mamba.conv_width}, {"fusion_mode", std::string(fusion_mode_name(cfg.mamba.fusion))},
        {"variant", std::string(variant_name(cfg.mamba.variant))}, {"num_blocks", cfg.num_blocks},
        {"num_classes", cfg.num_classes}};
}

ModelConfig model_config_from_json(const json& j)
{
    const std::string where = "model";
    reject_unknown_keys(j, where,
        {"preset", "branches", "channel_plan", "dropout_p", "afm_reduction", "d_model", "expand", "state_size",
            "conv_width", "fusion_mode", "variant", "num_blocks", "num_classes"});
    ModelConfig cfg = ModelConfig::from_preset(j.contains("preset") ? get_string(j, where, "preset") : "desk");
    if (j.contains("branches")) {
        const auto& arr = j["branches"];
        if (!arr.is_array() || arr.size() != 3) {
            throw ConfigError("field 'model.branches' must list exactly 3 branches");
        }
        for (std::size_t i = 0; i < 3; ++i) {
            cfg.trcnn.branches[i] = branch_from_json(arr[i], where + ".branches[" + std::to_string(i) + "]");
        }
    }
    if (j.contains("channel_plan")) {
        const auto plan = get_counts(j, where, "channel_plan");
        for (auto& b : cfg.trcnn.branches) {
            b.channel_plan = plan;
        }
    }
    if (j.contains("dropout_p")) {
        const double p = get_number(j, where, "dropout_p");
        for (auto& b : cfg.trcnn.branches) {
            b.dropout_p = p;
        }
    }
    const bool explicit_reduction = j.contains("afm_reduction");
    if (explicit_reduction) {
        cfg.afm_reduction = get_count(j, where, "afm_reduction");
    } else {
        cfg.afm_reduction = afm_default_reduction(cfg.feature_channels());
    }
    if (j.contains("d_model")) {
        cfg.mamba.d_model = get_count(j, where, "d_model");
    }
    if (j.contains("expand")) {
        cfg.mamba.expand = get_count(j, where, "expand");
    }
    if (j.contains("state_size")) {
        cfg.mamba.state_size = get_count(j, where, "state_size");
    }
    if (j.contains("conv_width")) {
        cfg.mamba.conv_width = get_count(j, where, "conv_width");
    }
    if (j.contains("fusion_mode")) {
        const auto s = get_string(j, where, "fusion_mode");
        const auto m = parse_fusion_mode(s);
        if (!m) {
            throw ConfigError("field 'model.fusion_mode' must be gated_residual or average, got '" + s + "'");
        }
        cfg.mamba.fusion = *m;
    }
    if (j.contains("variant")) {
        const auto s = get_string(j, where, "variant");
        const auto v = parse_variant(s);
        if (!v) {
            throw ConfigError("field 'model.variant' must be one of no_mamba, fwd_only, bwd_only, bimamba; got '" + s
                + "'");
        }
        cfg.mamba.variant = *v;
    }
    if (j.contains("num_blocks")) {
        cfg.num_blocks = get_count(j, where, "num_blocks");
    }
    if (j.contains("num_classes")) {
        cfg.num_classes = get_count(j, where, "num_classes");
    }
    cfg.validate();
    return cfg;
}

} // namespace bimamsleep::detail
