#include "udos/watchdog.hpp"

namespace udos {

MitigationState watchdog_tick(MitigationState state, const SystemMetrics& m,
                              const PolicyConfig& cfg) {
    if (!state.active) {
        bool any_enable = m.cpu_usage >= cfg.enable_thresholds.cpu ||
                          m.memory_usage >= cfg.enable_thresholds.memory ||
                          m.connection_pool_usage >= cfg.enable_thresholds.connection_pool;
        if (any_enable) {
            state.active = true;
            state.last_transition = m.timestamp;
        }
    } else {
        bool all_disable = m.cpu_usage < cfg.disable_thresholds.cpu &&
                           m.memory_usage < cfg.disable_thresholds.memory &&
                           m.connection_pool_usage < cfg.disable_thresholds.connection_pool;
        if (all_disable) {
            state.active = false;
            state.last_transition = m.timestamp;
        }
    }
    return state;
}

}  // namespace udos
