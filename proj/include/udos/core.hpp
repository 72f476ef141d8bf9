#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace udos {

// Simulation time: nanoseconds since epoch 0. Wall-clock seconds map 1:1.
using Nanos = std::int64_t;

constexpr Nanos kNanosPerSecond = 1'000'000'000;

inline Nanos seconds_to_nanos(double s) {
    return static_cast<Nanos>(s * 1e9 + (s >= 0 ? 0.5 : -0.5));
}

inline double nanos_to_seconds(Nanos ns) {
    return static_cast<double>(ns) / 1e9;
}

/// Network-stack layers in packet traversal order.
enum class Layer : std::uint8_t { Link = 0, Network = 1, Transport = 2, Application = 3 };

constexpr std::size_t kLayerCount = 4;

constexpr std::array<Layer, kLayerCount> all_layers() {
    return {Layer::Link, Layer::Network, Layer::Transport, Layer::Application};
}

constexpr std::size_t layer_index(Layer l) {
    return static_cast<std::size_t>(l);
}

const char* layer_name(Layer l);
bool parse_layer(const std::string& name, Layer& out);

/// Which counter a threshold or ranking refers to.
enum class Resource : std::uint8_t { Instructions = 0, MbmBytes = 1, Connections = 2 };

const char* resource_name(Resource r);
bool parse_resource(const std::string& name, Resource& out);

/// Per-layer consumption triple. Counters are unsigned 64-bit and addition
/// saturates at the maximum instead of wrapping.
struct ResourceVector {
    std::uint64_t instructions = 0;
    std::uint64_t mbm_bytes = 0;
    std::uint64_t new_connections = 0;

    bool operator==(const ResourceVector&) const = default;

    bool is_zero() const {
        return instructions == 0 && mbm_bytes == 0 && new_connections == 0;
    }
};

std::uint64_t saturating_add(std::uint64_t a, std::uint64_t b);
std::uint64_t saturating_sub(std::uint64_t a, std::uint64_t b);

ResourceVector resource_vector_add(const ResourceVector& a, const ResourceVector& b);
ResourceVector resource_vector_sub(const ResourceVector& a, const ResourceVector& b);

inline ResourceVector operator+(const ResourceVector& a, const ResourceVector& b) {
    return resource_vector_add(a, b);
}

inline ResourceVector& operator+=(ResourceVector& a, const ResourceVector& b) {
    a = resource_vector_add(a, b);
    return a;
}

/// One usage vector per layer, indexed by layer_index().
using LayerUsage = std::array<ResourceVector, kLayerCount>;

LayerUsage layer_usage_add(const LayerUsage& a, const LayerUsage& b);

/// Client identity: a canonical IPv4 or IPv6 address. IPv4 is never stored in
/// the v4-mapped IPv6 form; parsing demotes ::ffff:a.b.c.d to IPv4.
struct ClientId {
    std::uint8_t family = 4;              // 4 or 6
    std::array<std::uint8_t, 16> addr{};  // network byte order; v4 uses addr[0..3]

    bool operator==(const ClientId&) const = default;
    auto operator<=>(const ClientId&) const = default;
};

/// Parses a dotted-quad or RFC-4291 text address. Throws std::invalid_argument
/// on malformed input.
ClientId parse_client_id(const std::string& text);
std::string format_client_id(const ClientId& id);

/// One packet's attributed usage. Kernel layers come from the kernel-side
/// probes, Application from the user-side probe; the Application entry's
/// new_connections counts connections accepted while serving this request.
struct PacketRecord {
    Nanos timestamp = 0;
    std::uint32_t cpu_id = 0;
    ClientId client;
    LayerUsage usage{};
    std::uint32_t program_id = 0;
    bool incomplete = false;

    bool operator==(const PacketRecord&) const = default;
};

/// Fixed encoded size of a PacketRecord (see trace_io).
constexpr std::size_t kEncodedRecordSize = 126;

struct SystemThresholds {
    double cpu = 0;
    double memory = 0;
    double connection_pool = 0;

    bool operator==(const SystemThresholds&) const = default;
};

/// All policy knobs. Defaults follow the shipped default_policy.cfg.
struct PolicyConfig {
    double blocking_time_s = 5.0;
    double window_time_s = 3.0;
    double watchdog_interval_s = 0.1;
    std::uint64_t ring_buffer_bytes_per_core = 16 * 1024 * 1024;

    SystemThresholds enable_thresholds{0.75, 0.75, 0.75};
    SystemThresholds disable_thresholds{0.35, 0.50, 0.35};

    // Indexed by layer_index().
    std::array<std::uint64_t, kLayerCount> instruction_thresholds{
        80'000'000'000,      // link
        1'000'000'000,       // network
        45'000'000'000,      // transport
        300'000,             // application
    };
    std::array<std::uint64_t, kLayerCount> mbm_thresholds{
        1'500'000'000'000,   // link
        500'000'000,         // network
        50'000'000'000,      // transport
        1'000'000'000,       // application
    };
    std::uint64_t connection_threshold = 6;

    std::set<ClientId> whitelist;

    Nanos blocking_time_ns() const { return seconds_to_nanos(blocking_time_s); }
    Nanos window_time_ns() const { return seconds_to_nanos(window_time_s); }
    Nanos watchdog_interval_ns() const { return seconds_to_nanos(watchdog_interval_s); }

    bool operator==(const PolicyConfig&) const = default;
};

/// Returns every invariant violation (empty result means the config is valid).
std::vector<std::string> validate_policy(const PolicyConfig& cfg);

/// Flat `key = value` file I/O for PolicyConfig. load_policy throws
/// ConfigError on unparseable lines or unknown keys.
PolicyConfig load_policy_file(const std::string& path);
PolicyConfig load_policy_text(const std::string& text, const std::string& origin = "<string>");
std::string save_policy_text(const PolicyConfig& cfg);
void save_policy_file(const PolicyConfig& cfg, const std::string& path);

/// Applies `policy.`-prefixed overrides (used by scenario files).
void apply_policy_override(PolicyConfig& cfg, const std::string& key, const std::string& value,
                           const std::string& origin, int line);

struct ConfigError : std::runtime_error {
    ConfigError(const std::string& origin, int line, const std::string& reason);
    int line;
};

}  // namespace udos
