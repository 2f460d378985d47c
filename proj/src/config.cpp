#include "msurv/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace msurv {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

KvConfig KvConfig::parse_string(const std::string& text, const std::string& origin) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ParseError(origin + ":" + std::to_string(lineno) + ": unterminated section");
            }
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) {
                throw ParseError(origin + ":" + std::to_string(lineno) + ": empty section name");
            }
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ParseError(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ParseError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        cfg.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str(), path);
}

const std::string& KvConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key: " + key);
    return it->second;
}

std::string KvConfig::get_or(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key) const {
    const std::string& s = get(key);
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not a number: '" + s + "'");
    }
}

double KvConfig::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

long KvConfig::get_int(const std::string& key) const {
    const std::string& s = get(key);
    try {
        std::size_t pos = 0;
        const long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not an integer: '" + s + "'");
    }
}

long KvConfig::get_int_or(const std::string& key, long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

bool KvConfig::get_bool_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = get(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config key " + key + " is not a boolean: '" + s + "'");
}

std::vector<std::string> KvConfig::get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string t = trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

void KvConfig::set_double(const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    values_[key] = buf;
}

std::vector<std::string> KvConfig::keys_in(const std::string& section) const {
    std::vector<std::string> out;
    const std::string prefix = section + ".";
    for (const auto& [k, v] : values_) {
        if (k.rfind(prefix, 0) == 0 && k.find('.', prefix.size()) == std::string::npos) {
            out.push_back(k.substr(prefix.size()));
        }
    }
    return out;
}

std::string KvConfig::serialize() const {
    // Section-less keys must be emitted before any [section] header or they
    // would re-parse under whatever section precedes them.
    std::ostringstream out;
    for (const auto& [k, v] : values_) {
        if (k.find('.') == std::string::npos) out << k << " = " << v << "\n";
    }
    std::string current_section;
    bool any_section = false;
    for (const auto& [k, v] : values_) {
        const auto dot = k.rfind('.');
        if (dot == std::string::npos) continue;
        const std::string section = k.substr(0, dot);
        if (!any_section || section != current_section) {
            out << "\n[" << section << "]\n";
            current_section = section;
            any_section = true;
        }
        out << k.substr(dot + 1) << " = " << v << "\n";
    }
    return out.str();
}

void KvConfig::write_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file: " + path);
    out << serialize();
}

}  // namespace msurv
