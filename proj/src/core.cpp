#include "udos/core.hpp"

#include "udos/kv.hpp"

#include <arpa/inet.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace udos {

ConfigError::ConfigError(const std::string& origin, int line_, const std::string& reason)
    : std::runtime_error(origin + ":" + std::to_string(line_) + ": " + reason), line(line_) {}

const char* layer_name(Layer l) {
    switch (l) {
        case Layer::Link: return "link";
        case Layer::Network: return "network";
        case Layer::Transport: return "transport";
        case Layer::Application: return "application";
    }
    return "?";
}

bool parse_layer(const std::string& name, Layer& out) {
    for (Layer l : all_layers()) {
        if (name == layer_name(l)) {
            out = l;
            return true;
        }
    }
    return false;
}

const char* resource_name(Resource r) {
    switch (r) {
        case Resource::Instructions: return "instructions";
        case Resource::MbmBytes: return "mbm_bytes";
        case Resource::Connections: return "connections";
    }
    return "?";
}

bool parse_resource(const std::string& name, Resource& out) {
    if (name == "instructions") {
        out = Resource::Instructions;
    } else if (name == "mbm_bytes") {
        out = Resource::MbmBytes;
    } else if (name == "connections") {
        out = Resource::Connections;
    } else {
        return false;
    }
    return true;
}

std::uint64_t saturating_add(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a + b;
    return s < a ? UINT64_MAX : s;
}

std::uint64_t saturating_sub(std::uint64_t a, std::uint64_t b) {
    return a > b ? a - b : 0;
}

ResourceVector resource_vector_add(const ResourceVector& a, const ResourceVector& b) {
    return {saturating_add(a.instructions, b.instructions),
            saturating_add(a.mbm_bytes, b.mbm_bytes),
            saturating_add(a.new_connections, b.new_connections)};
}

ResourceVector resource_vector_sub(const ResourceVector& a, const ResourceVector& b) {
    return {saturating_sub(a.instructions, b.instructions),
            saturating_sub(a.mbm_bytes, b.mbm_bytes),
            saturating_sub(a.new_connections, b.new_connections)};
}

LayerUsage layer_usage_add(const LayerUsage& a, const LayerUsage& b) {
    LayerUsage out;
    for (std::size_t i = 0; i < kLayerCount; ++i) {
        out[i] = resource_vector_add(a[i], b[i]);
    }
    return out;
}

namespace {

bool is_v4_mapped(const std::array<std::uint8_t, 16>& a) {
    for (int i = 0; i < 10; ++i) {
        if (a[i] != 0) return false;
    }
    return a[10] == 0xff && a[11] == 0xff;
}

}  // namespace

ClientId parse_client_id(const std::string& text) {
    ClientId id;
    in_addr v4{};
    if (inet_pton(AF_INET, text.c_str(), &v4) == 1) {
        id.family = 4;
        std::memcpy(id.addr.data(), &v4, 4);
        return id;
    }
    in6_addr v6{};
    if (inet_pton(AF_INET6, text.c_str(), &v6) == 1) {
        std::array<std::uint8_t, 16> bytes{};
        std::memcpy(bytes.data(), &v6, 16);
        if (is_v4_mapped(bytes)) {
            // Canonical form: demote v4-mapped addresses to plain IPv4.
            id.family = 4;
            std::copy(bytes.begin() + 12, bytes.end(), id.addr.begin());
            return id;
        }
        id.family = 6;
        id.addr = bytes;
        return id;
    }
    throw std::invalid_argument("not an IP address: " + text);
}

std::string format_client_id(const ClientId& id) {
    char buf[INET6_ADDRSTRLEN] = {};
    if (id.family == 4) {
        in_addr v4{};
        std::memcpy(&v4, id.addr.data(), 4);
        inet_ntop(AF_INET, &v4, buf, sizeof(buf));
    } else {
        in6_addr v6{};
        std::memcpy(&v6, id.addr.data(), 16);
        inet_ntop(AF_INET6, &v6, buf, sizeof(buf));
    }
    return buf;
}

std::vector<std::string> validate_policy(const PolicyConfig& cfg) {
    std::vector<std::string> out;
    auto positive = [&out](double v, const char* field) {
        if (!(v > 0)) out.push_back(std::string(field) + " must be positive");
    };
    positive(cfg.blocking_time_s, "blocking_time");
    positive(cfg.window_time_s, "window_time");
    positive(cfg.watchdog_interval_s, "watchdog_interval");
    if (cfg.ring_buffer_bytes_per_core == 0) {
        out.push_back("ring_buffer_bytes_per_core must be positive");
    }

    struct Pair {
        double enable;
        double disable;
        const char* name;
    };
    const Pair pairs[] = {
        {cfg.enable_thresholds.cpu, cfg.disable_thresholds.cpu, "cpu"},
        {cfg.enable_thresholds.memory, cfg.disable_thresholds.memory, "memory"},
        {cfg.enable_thresholds.connection_pool, cfg.disable_thresholds.connection_pool,
         "connection_pool"},
    };
    for (const auto& p : pairs) {
        if (!(p.enable > 0)) out.push_back(std::string("enable_threshold.") + p.name + " must be positive");
        if (!(p.disable > 0)) out.push_back(std::string("disable_threshold.") + p.name + " must be positive");
        if (!(p.disable < p.enable)) out.push_back(std::string(p.name) + " hysteresis gap");
    }

    for (Layer l : all_layers()) {
        if (cfg.instruction_thresholds[layer_index(l)] == 0) {
            out.push_back(std::string("instr_threshold.") + layer_name(l) + " must be positive");
        }
        if (cfg.mbm_thresholds[layer_index(l)] == 0) {
            out.push_back(std::string("mbm_threshold.") + layer_name(l) + " must be positive");
        }
    }
    if (cfg.connection_threshold == 0) {
        out.push_back("connection_threshold must be positive");
    }
    return out;
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool parse_system_field(const std::string& suffix, SystemThresholds& t, double v) {
    if (suffix == "cpu") {
        t.cpu = v;
    } else if (suffix == "memory") {
        t.memory = v;
    } else if (suffix == "connection_pool") {
        t.connection_pool = v;
    } else {
        return false;
    }
    return true;
}

void apply_policy_entry(PolicyConfig& cfg, const KvEntry& e, const std::string& origin) {
    const std::string& k = e.key;
    if (k == "blocking_time") {
        cfg.blocking_time_s = KvMap::to_double(e, origin);
    } else if (k == "window_time") {
        cfg.window_time_s = KvMap::to_double(e, origin);
    } else if (k == "watchdog_interval") {
        cfg.watchdog_interval_s = KvMap::to_double(e, origin);
    } else if (k == "ring_buffer_bytes_per_core") {
        cfg.ring_buffer_bytes_per_core = KvMap::to_u64(e, origin);
    } else if (k == "connection_threshold") {
        cfg.connection_threshold = KvMap::to_u64(e, origin);
    } else if (k == "whitelist") {
        try {
            cfg.whitelist.insert(parse_client_id(e.value));
        } catch (const std::invalid_argument& ex) {
            throw ConfigError(origin, e.line, ex.what());
        }
    } else if (k.rfind("enable_threshold.", 0) == 0) {
        if (!parse_system_field(k.substr(17), cfg.enable_thresholds, KvMap::to_double(e, origin))) {
            throw ConfigError(origin, e.line, "unknown key `" + k + "`");
        }
    } else if (k.rfind("disable_threshold.", 0) == 0) {
        if (!parse_system_field(k.substr(18), cfg.disable_thresholds, KvMap::to_double(e, origin))) {
            throw ConfigError(origin, e.line, "unknown key `" + k + "`");
        }
    } else if (k.rfind("instr_threshold.", 0) == 0) {
        Layer l;
        if (!parse_layer(k.substr(16), l)) {
            throw ConfigError(origin, e.line, "unknown key `" + k + "`");
        }
        cfg.instruction_thresholds[layer_index(l)] = KvMap::to_u64(e, origin);
    } else if (k.rfind("mbm_threshold.", 0) == 0) {
        Layer l;
        if (!parse_layer(k.substr(14), l)) {
            throw ConfigError(origin, e.line, "unknown key `" + k + "`");
        }
        cfg.mbm_thresholds[layer_index(l)] = KvMap::to_u64(e, origin);
    } else {
        throw ConfigError(origin, e.line, "unknown key `" + k + "`");
    }
}

}  // namespace

PolicyConfig load_policy_text(const std::string& text, const std::string& origin) {
    KvMap kv = KvMap::parse_text(text, origin);
    PolicyConfig cfg;
    cfg.whitelist.clear();
    for (const auto& e : kv.entries()) {
        apply_policy_entry(cfg, e, origin);
    }
    return cfg;
}

PolicyConfig load_policy_file(const std::string& path) {
    KvMap kv = KvMap::parse_file(path);
    PolicyConfig cfg;
    cfg.whitelist.clear();
    for (const auto& e : kv.entries()) {
        apply_policy_entry(cfg, e, path);
    }
    return cfg;
}

void apply_policy_override(PolicyConfig& cfg, const std::string& key, const std::string& value,
                           const std::string& origin, int line) {
    KvEntry e{key, value, line};
    apply_policy_entry(cfg, e, origin);
}

std::string save_policy_text(const PolicyConfig& cfg) {
    std::ostringstream out;
    out << "blocking_time = " << fmt_double(cfg.blocking_time_s) << "\n";
    out << "window_time = " << fmt_double(cfg.window_time_s) << "\n";
    out << "watchdog_interval = " << fmt_double(cfg.watchdog_interval_s) << "\n";
    out << "ring_buffer_bytes_per_core = " << cfg.ring_buffer_bytes_per_core << "\n";
    out << "enable_threshold.cpu = " << fmt_double(cfg.enable_thresholds.cpu) << "\n";
    out << "enable_threshold.memory = " << fmt_double(cfg.enable_thresholds.memory) << "\n";
    out << "enable_threshold.connection_pool = "
        << fmt_double(cfg.enable_thresholds.connection_pool) << "\n";
    out << "disable_threshold.cpu = " << fmt_double(cfg.disable_thresholds.cpu) << "\n";
    out << "disable_threshold.memory = " << fmt_double(cfg.disable_thresholds.memory) << "\n";
    out << "disable_threshold.connection_pool = "
        << fmt_double(cfg.disable_thresholds.connection_pool) << "\n";
    for (Layer l : all_layers()) {
        out << "instr_threshold." << layer_name(l) << " = "
            << cfg.instruction_thresholds[layer_index(l)] << "\n";
    }
    for (Layer l : all_layers()) {
        out << "mbm_threshold." << layer_name(l) << " = " << cfg.mbm_thresholds[layer_index(l)]
            << "\n";
    }
    out << "connection_threshold = " << cfg.connection_threshold << "\n";
    for (const auto& id : cfg.whitelist) {
        out << "whitelist = " << format_client_id(id) << "\n";
    }
    return out.str();
}

void save_policy_file(const PolicyConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError(path, 0, "cannot open file for writing");
    }
    out << save_policy_text(cfg);
}

}  // namespace udos
