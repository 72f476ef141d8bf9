#include "udos/kv.hpp"

#include "udos/core.hpp"

#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace udos {

std::string trim_copy(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

KvMap KvMap::parse_text(const std::string& text, const std::string& origin) {
    KvMap out;
    out.origin_ = origin;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        auto hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        std::string line = trim_copy(raw);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin, lineno, "expected `key = value`");
        }
        KvEntry e;
        e.key = trim_copy(line.substr(0, eq));
        e.value = trim_copy(line.substr(eq + 1));
        e.line = lineno;
        if (e.key.empty()) {
            throw ConfigError(origin, lineno, "empty key");
        }
        out.entries_.push_back(std::move(e));
    }
    return out;
}

KvMap KvMap::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(path, 0, "cannot open file");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str(), path);
}

double KvMap::to_double(const KvEntry& e, const std::string& origin) {
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(e.value.c_str(), &end);
    if (end == e.value.c_str() || *end != '\0' || errno == ERANGE) {
        throw ConfigError(origin, e.line, "invalid number for `" + e.key + "`: " + e.value);
    }
    return v;
}

std::uint64_t KvMap::to_u64(const KvEntry& e, const std::string& origin) {
    errno = 0;
    char* end = nullptr;
    if (!e.value.empty() && e.value[0] == '-') {
        throw ConfigError(origin, e.line, "negative value for `" + e.key + "`: " + e.value);
    }
    unsigned long long v = std::strtoull(e.value.c_str(), &end, 10);
    if (end == e.value.c_str() || *end != '\0' || errno == ERANGE) {
        throw ConfigError(origin, e.line, "invalid count for `" + e.key + "`: " + e.value);
    }
    return static_cast<std::uint64_t>(v);
}

bool KvMap::to_bool(const KvEntry& e, const std::string& origin) {
    if (e.value == "true" || e.value == "1" || e.value == "on" || e.value == "yes") return true;
    if (e.value == "false" || e.value == "0" || e.value == "off" || e.value == "no") return false;
    throw ConfigError(origin, e.line, "invalid boolean for `" + e.key + "`: " + e.value);
}

}  // namespace udos
