#pragma once

#include "bimamsleep/focal_loss.hpp"
#include "bimamsleep/model.hpp"
#include "bimamsleep/scheduler.hpp"
#include "bimamsleep/smote.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bimamsleep {

struct TrainConfig {
    double lr0 = 1e-3;
    std::size_t batch_size = 128;
    std::size_t max_epochs = 100;
    std::size_t early_stop_patience = 30;
    std::size_t scheduler_switch_patience = 15;
    double rrp_factor = 0.5;
    std::size_t rrp_patience = 5;
    double clr_base = 1e-5;
    double clr_max = 1e-3;
    std::size_t clr_step_epochs = 5;
    std::uint64_t seed = 0;

    std::size_t folds = 5;
    double val_fraction = 0.1;
    double grad_clip = 5.0;
    std::size_t eval_batch_size = 256;

    double focal_gamma = 2.0;
    std::vector<double> focal_alpha; // empty: inverse class frequency of each fold's training split
    SmoteConfig smote;
    ModelConfig model = ModelConfig::desk();

    void validate() const; // ConfigError naming the field
    SchedulerConfig scheduler() const;

    bool operator==(const TrainConfig&) const = default;
};

/// JSON mirror of TrainConfig. Every key is optional; unknown keys are
/// rejected. Example:
///   {"max_epochs": 12, "batch_size": 32, "seed": 7,
///    "focal": {"gamma": 2.0, "alpha": "auto"},
///    "smote": {"enabled": true, "k_neighbors": 5, "m_danger": 10, "target_ratio": 0.5},
///    "model": {"preset": "desk", "d_model": 32, "fusion_mode": "gated_residual"}}
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig load_train_config(const std::filesystem::path& path); // ConfigError; DataError if unreadable

} // namespace bimamsleep
