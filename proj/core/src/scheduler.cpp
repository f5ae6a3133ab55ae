#include "bimamsleep/scheduler.hpp"

#include "bimamsleep/error.hpp"

#include <algorithm>
#include <cmath>

namespace bimamsleep {

std::string_view phase_name(SchedulerPhase p)
{
    return p == SchedulerPhase::RRP ? "RRP" : "CLR";
}

void SchedulerConfig::validate() const
{
    if (!(lr0 > 0.0)) {
        throw ConfigError("lr0 must be positive");
    }
    if (!(rrp_factor > 0.0 && rrp_factor < 1.0)) {
        throw ConfigError("rrp_factor must lie in (0, 1)");
    }
    if (rrp_patience == 0 || switch_patience == 0 || early_stop_patience == 0 || clr_step_epochs == 0) {
        throw ConfigError("rrp_patience, scheduler_switch_patience, early_stop_patience and clr_step_epochs must be "
                          "positive");
    }
    if (!(clr_base > 0.0 && clr_base < clr_max)) {
        throw ConfigError("clr_base must be positive and below clr_max");
    }
}

SchedulerState SchedulerState::initial(const SchedulerConfig& cfg)
{
    SchedulerState s;
    s.lr = cfg.lr0;
    return s;
}

double clr_lr(const SchedulerConfig& cfg, std::size_t k)
{
    const auto period = 2 * cfg.clr_step_epochs;
    const auto pos = k % period;
    const auto dist = pos <= cfg.clr_step_epochs ? pos : period - pos;
    const double frac = static_cast<double>(dist) / static_cast<double>(cfg.clr_step_epochs);
    return cfg.clr_base + (cfg.clr_max - cfg.clr_base) * frac;
}

bool scheduler_tick(SchedulerState& state, double val_acc, const SchedulerConfig& cfg)
{
    ++state.ticks;
    const bool improved = val_acc > state.best_val_acc;
    if (improved) {
        state.best_val_acc = val_acc;
        state.epochs_since_best = 0;
    } else {
        ++state.epochs_since_best;
    }

    if (state.phase == SchedulerPhase::RRP) {
        if (state.epochs_since_best >= cfg.switch_patience) {
            state.phase = SchedulerPhase::CLR;
            state.clr_epoch = 0;
            state.lr = clr_lr(cfg, 0);
        } else if (state.epochs_since_best > 0 && state.epochs_since_best % cfg.rrp_patience == 0) {
            state.lr = std::max(state.lr * cfg.rrp_factor, cfg.clr_base);
        }
    } else {
        ++state.clr_epoch;
        state.lr = clr_lr(cfg, state.clr_epoch);
    }
    return improved;
}

bool early_stop(const SchedulerState& state, const SchedulerConfig& cfg)
{
    return state.epochs_since_best >= cfg.early_stop_patience;
}

} // namespace bimamsleep
