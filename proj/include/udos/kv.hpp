#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace udos {

/// One parsed `key = value` line.
struct KvEntry {
    std::string key;
    std::string value;
    int line = 0;
};

/// Parser for the flat config format: one `key = value` per line, `#` starts
/// a comment, blank lines ignored. Keys may repeat (e.g. whitelist entries).
class KvMap {
public:
    static KvMap parse_text(const std::string& text, const std::string& origin);
    static KvMap parse_file(const std::string& path);

    const std::vector<KvEntry>& entries() const { return entries_; }
    const std::string& origin() const { return origin_; }

    // Typed accessors; each throws ConfigError on a malformed value.
    static double to_double(const KvEntry& e, const std::string& origin);
    static std::uint64_t to_u64(const KvEntry& e, const std::string& origin);
    static bool to_bool(const KvEntry& e, const std::string& origin);

private:
    std::vector<KvEntry> entries_;
    std::string origin_;
};

std::string trim_copy(const std::string& s);

}  // namespace udos
