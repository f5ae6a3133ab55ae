#include "bimamsleep/train_config.hpp"

#include "bimamsleep/error.hpp"
#include "json_config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace bimamsleep {

using detail::json;

void TrainConfig::validate() const
{
    scheduler().validate();
    if (batch_size == 0) {
        throw ConfigError("batch_size must be positive");
    }
    if (max_epochs == 0) {
        throw ConfigError("max_epochs must be positive");
    }
    if (folds < 2) {
        throw ConfigError("folds must be at least 2");
    }
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw ConfigError("val_fraction must lie in (0, 1)");
    }
    if (!(grad_clip > 0.0)) {
        throw ConfigError("grad_clip must be positive");
    }
    if (eval_batch_size == 0) {
        throw ConfigError("eval_batch_size must be positive");
    }
    FocalConfig focal;
    focal.gamma = focal_gamma;
    if (!focal_alpha.empty()) {
        focal.alpha = focal_alpha;
    }
    focal.validate(model.num_classes);
    smote.validate();
    model.validate();
}

SchedulerConfig TrainConfig::scheduler() const
{
    SchedulerConfig s;
    s.lr0 = lr0;
    s.rrp_factor = rrp_factor;
    s.rrp_patience = rrp_patience;
    s.switch_patience = scheduler_switch_patience;
    s.early_stop_patience = early_stop_patience;
    s.clr_base = clr_base;
    s.clr_max = clr_max;
    s.clr_step_epochs = clr_step_epochs;
    return s;
}

TrainConfig train_config_from_json(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON (") + e.what() + ")");
    }
    const std::string where = "config";
    detail::reject_unknown_keys(j, where,
        {"lr0", "batch_size", "max_epochs", "early_stop_patience", "scheduler_switch_patience", "rrp_factor",
            "rrp_patience", "clr_base", "clr_max", "clr_step_epochs", "seed", "folds", "val_fraction", "grad_clip",
            "eval_batch_size", "focal", "smote", "model"});
    TrainConfig c;
    const auto num = [&](const char* key, double& dst) {
        if (j.contains(key)) {
            dst = detail::get_number(j, where, key);
        }
    };
    const auto count = [&](const char* key, std::size_t& dst) {
        if (j.contains(key)) {
            dst = detail::get_count(j, where, key);
        }
    };
    num("lr0", c.lr0);
    count("batch_size", c.batch_size);
    count("max_epochs", c.max_epochs);
    count("early_stop_patience", c.early_stop_patience);
    count("scheduler_switch_patience", c.scheduler_switch_patience);
    num("rrp_factor", c.rrp_factor);
    count("rrp_patience", c.rrp_patience);
    num("clr_base", c.clr_base);
    num("clr_max", c.clr_max);
    count("clr_step_epochs", c.clr_step_epochs);
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned()) {
            throw ConfigError("field 'config.seed' must be a non-negative integer");
        }
        c.seed = j["seed"].get<std::uint64_t>();
    }
    count("folds", c.folds);
    num("val_fraction", c.val_fraction);
    num("grad_clip", c.grad_clip);
    count("eval_batch_size", c.eval_batch_size);

    if (j.contains("focal")) {
        const auto& f = j["focal"];
        detail::reject_unknown_keys(f, "config.focal", {"gamma", "alpha"});
        if (f.contains("gamma")) {
            c.focal_gamma = detail::get_number(f, "config.focal", "gamma");
        }
        if (f.contains("alpha")) {
            const auto& a = f["alpha"];
            if (a.is_string() && a.get<std::string>() == "auto") {
                c.focal_alpha.clear();
            } else if (a.is_array()) {
                c.focal_alpha.clear();
                for (const auto& v : a) {
                    if (!v.is_number()) {
                        throw ConfigError("field 'config.focal.alpha' must be \"auto\" or an array of numbers");
                    }
                    c.focal_alpha.push_back(v.get<double>());
                }
            } else {
                throw ConfigError("field 'config.focal.alpha' must be \"auto\" or an array of numbers");
            }
        }
    }
    if (j.contains("smote")) {
        const auto& s = j["smote"];
        const std::string sw = "config.smote";
        detail::reject_unknown_keys(s, sw, {"enabled", "k_neighbors", "m_danger", "target_ratio"});
        if (s.contains("enabled")) {
            c.smote.enabled = detail::get_bool(s, sw, "enabled");
        }
        if (s.contains("k_neighbors")) {
            c.smote.k_neighbors = detail::get_count(s, sw, "k_neighbors");
        }
        if (s.contains("m_danger")) {
            c.smote.m_danger = detail::get_count(s, sw, "m_danger");
        }
        if (s.contains("target_ratio")) {
            c.smote.target_ratio = detail::get_number(s, sw, "target_ratio");
        }
    }
    if (j.contains("model")) {
        c.model = detail::model_config_from_json(j["model"]);
    }
    c.validate();
    return c;
}

std::string train_config_to_json(const TrainConfig& c)
{
    json alpha = c.focal_alpha.empty() ? json("auto") : json(c.focal_alpha);
    json j{{"lr0", c.lr0}, {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
        {"early_stop_patience", c.early_stop_patience}, {"scheduler_switch_patience", c.scheduler_switch_patience},
        {"rrp_factor", c.rrp_factor}, {"rrp_patience", c.rrp_patience}, {"clr_base", c.clr_base},
        {"clr_max", c.clr_max}, {"clr_step_epochs", c.clr_step_epochs}, {"seed", c.seed}, {"folds", c.folds},
        {"val_fraction", c.val_fraction}, {"grad_clip", c.grad_clip}, {"eval_batch_size", c.eval_batch_size},
        {"focal", {{"gamma", c.focal_gamma}, {"alpha", alpha}}},
        {"smote",
            {{"enabled", c.smote.enabled}, {"k_neighbors", c.smote.k_neighbors}, {"m_danger", c.smote.m_danger},
                {"target_ratio", c.smote.target_ratio}}},
        {"model", detail::model_config_to_json(c.model)}};
    return j.dump(2) + "\n";
}

TrainConfig load_train_config(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open config file " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return train_config_from_json(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

} // namespace bimamsleep
