#pragma once

#include <map>
#include <string>
#include <vector>

#include "msurv/common.hpp"

namespace msurv {

/// Sectioned `key = value` text file. Keys are stored flat as "section.key"
/// ("key" alone before any section header). Parsing accepts blank lines and
/// `#` comments; serialization is deterministic (sorted keys, one section
/// header per group) so resolved configs are byte-reproducible.
class KvConfig {
public:
    static KvConfig parse_string(const std::string& text, const std::string& origin = "<string>");
    static KvConfig parse_file(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    long get_int(const std::string& key) const;
    long get_int_or(const std::string& key, long fallback) const;
    bool get_bool_or(const std::string& key, bool fallback) const;
    /// Comma-separated list; entries are trimmed.
    std::vector<std::string> get_list(const std::string& key) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    void set_double(const std::string& key, double value);
    void set_int(const std::string& key, long value) { values_[key] = std::to_string(value); }

    /// Keys under "section." with the prefix stripped.
    std::vector<std::string> keys_in(const std::string& section) const;

    std::string serialize() const;
    void write_file(const std::string& path) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

std::string trim(const std::string& s);

}  // namespace msurv
