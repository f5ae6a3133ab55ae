#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <string_view>

namespace bimamsleep {

enum class SchedulerPhase { RRP, CLR };

std::string_view phase_name(SchedulerPhase p);

struct SchedulerConfig {
    double lr0 = 1e-3;
    double rrp_factor = 0.5;
    std::size_t rrp_patience = 5;
    std::size_t switch_patience = 15;
    std::size_t early_stop_patience = 30;
    double clr_base = 1e-5;
    double clr_max = 1e-3;
    std::size_t clr_step_epochs = 5;

    void validate() const; // ConfigError
};

/// One stagnation counter drives all three thresholds: RRP decay every
/// rrp_patience stagnant epochs, the RRP -> CLR switch and early stopping.
struct SchedulerState {
    double lr = 1e-3;
    SchedulerPhase phase = SchedulerPhase::RRP;
    std::size_t epochs_since_best = 0;
    double best_val_acc = -std::numeric_limits<double>::infinity();
    std::size_t clr_epoch = 0; // epochs since the switch
    std::size_t ticks = 0;

    static SchedulerState initial(const SchedulerConfig& cfg);
};

// Triangular wave: clr_base at k = 0, clr_max at k = step, back to base at 2 step.
double clr_lr(const SchedulerConfig& cfg, std::size_t k);

/// Called once per epoch after validation. Returns true when val_acc is a
/// strict improvement (the caller snapshots the parameters).
bool scheduler_tick(SchedulerState& state, double val_acc, const SchedulerConfig& cfg);

bool early_stop(const SchedulerState& state, const SchedulerConfig& cfg);

} // namespace bimamsleep
