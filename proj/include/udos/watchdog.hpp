#pragma once

#include "udos/core.hpp"

namespace udos {

/// System-wide usage fractions sampled once per watchdog interval.
struct SystemMetrics {
    double cpu_usage = 0;
    double memory_usage = 0;
    double connection_pool_usage = 0;
    Nanos timestamp = 0;

    bool operator==(const SystemMetrics&) const = default;
};

struct MitigationState {
    bool active = false;
    Nanos last_transition = 0;
};

/// One watchdog step. Activation fires when ANY resource reaches its enable
/// threshold; deactivation requires ALL resources below their disable
/// thresholds. Equality counts as triggering on the enable side only.
MitigationState watchdog_tick(MitigationState state, const SystemMetrics& m,
                              const PolicyConfig& cfg);

}  // namespace udos
