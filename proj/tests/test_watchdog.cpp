#include <doctest.h>

#include "udos/watchdog.hpp"

#include <random>

using namespace udos;

namespace {

SystemMetrics metrics(double cpu, double mem, double pool, Nanos t = 0) {
    return SystemMetrics{cpu, mem, pool, t};
}

}  // namespace

TEST_CASE("any resource at its enable threshold activates") {
    PolicyConfig cfg;
    MitigationState s;
    s = watchdog_tick(s, metrics(0.80, 0.10, 0.10, 100), cfg);
    CHECK(s.active);
    CHECK(s.last_transition == 100);

    MitigationState mem_only;
    mem_only = watchdog_tick(mem_only, metrics(0.10, 0.75, 0.10), cfg);
    CHECK(mem_only.active);

    MitigationState pool_only;
    pool_only = watchdog_tick(pool_only, metrics(0.10, 0.10, 0.7501), cfg);
    CHECK(pool_only.active);

    MitigationState calm;
    calm = watchdog_tick(calm, metrics(0.74, 0.74, 0.74), cfg);
    CHECK_FALSE(calm.active);
}

TEST_CASE("deactivation requires every resource below its disable threshold") {
    PolicyConfig cfg;
    MitigationState s;
    s.active = true;

    // cpu 0.50 >= 0.35 and mem 0.40 < 0.50 but cpu holds it active.
    s = watchdog_tick(s, metrics(0.50, 0.40, 0.20), cfg);
    CHECK(s.active);

    s = watchdog_tick(s, metrics(0.30, 0.45, 0.30, 777), cfg);
    CHECK_FALSE(s.active);
    CHECK(s.last_transition == 777);
}

TEST_CASE("boundary semantics: >= enable triggers, < disable releases") {
    PolicyConfig cfg;
    MitigationState s;
    s = watchdog_tick(s, metrics(0.75, 0, 0), cfg);
    CHECK(s.active);
    // Exactly at the disable threshold is NOT below it.
    s = watchdog_tick(s, metrics(0.35, 0, 0), cfg);
    CHECK(s.active);
    s = watchdog_tick(s, metrics(0.3499, 0, 0), cfg);
    CHECK_FALSE(s.active);
}

TEST_CASE("square wave inside the hysteresis band causes zero transitions") {
    PolicyConfig cfg;
    for (bool start_active : {false, true}) {
        MitigationState s;
        s.active = start_active;
        s.last_transition = -1;
        for (int i = 0; i < 200; ++i) {
            double level = (i % 2 == 0) ? 0.40 : 0.70;  // within (0.35, 0.75)
            s = watchdog_tick(s, metrics(level, level * 0.66, level * 0.4, i), cfg);
            CHECK(s.active == start_active);
        }
        CHECK(s.last_transition == -1);
    }
}

TEST_CASE("random trajectories never violate the transition invariants") {
    PolicyConfig cfg;
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> level(0.0, 1.0);

    for (int run = 0; run < 50; ++run) {
        MitigationState s;
        for (int i = 0; i < 500; ++i) {
            SystemMetrics m = metrics(level(rng), level(rng), level(rng), i);
            bool was_active = s.active;
            s = watchdog_tick(s, m, cfg);

            bool any_enable = m.cpu_usage >= cfg.enable_thresholds.cpu ||
                              m.memory_usage >= cfg.enable_thresholds.memory ||
                              m.connection_pool_usage >= cfg.enable_thresholds.connection_pool;
            bool any_at_or_above_disable =
                m.cpu_usage >= cfg.disable_thresholds.cpu ||
                m.memory_usage >= cfg.disable_thresholds.memory ||
                m.connection_pool_usage >= cfg.disable_thresholds.connection_pool;

            if (!was_active && s.active) CHECK(any_enable);
            if (was_active && !s.active) CHECK_FALSE(any_at_or_above_disable);
            if (was_active == s.active) CHECK(s.active == was_active);
        }
    }
}
