#pragma once

#include "qrlab/common.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace qrlab {

// Key-value configuration files:
//
//   # comment
//   key = value
//
// Keys are unique; values are raw strings interpreted by the consumer.
// List values are comma-separated.

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
    const std::string t = trim(s);
    if (t.empty()) throw InvalidArgument(what, "empty numeric value");
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size()) throw InvalidArgument(what, "not a number: '" + t + "'");
    return v;
}

inline long long parse_int(const std::string& s, const std::string& what) {
    const std::string t = trim(s);
    char* end = nullptr;
    const long long v = std::strtoll(t.c_str(), &end, 10);
    if (t.empty() || end != t.c_str() + t.size())
        throw InvalidArgument(what, "not an integer: '" + t + "'");
    return v;
}

inline std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    for (const auto& part : split(s, ',')) out.push_back(parse_double(part, what));
    return out;
}

inline std::string format_double_list(const std::vector<double>& v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(std::istream& in, const std::string& source = "config") {
        KeyValueConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw InvalidArgument(source, "line " + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            if (key.empty())
                throw InvalidArgument(source, "line " + std::to_string(lineno) + ": empty key");
            if (cfg.values_.count(key))
                throw InvalidArgument(source, "line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
            cfg.values_[key] = trim(line.substr(eq + 1));
        }
        return cfg;
    }

    static KeyValueConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw InvalidArgument("config", "cannot open '" + path + "'");
        return parse(in, path);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    const std::string& get(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw InvalidArgument("config", "missing key '" + key + "'");
        return it->second;
    }

    std::string get_or(const std::string& key, const std::string& fallback) const {
        return has(key) ? get(key) : fallback;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    /// Rejects any key outside `allowed`.
    void check_keys(const std::set<std::string>& allowed) const {
        for (const auto& [k, v] : values_)
            if (!allowed.count(k)) throw InvalidArgument("config", "unknown key '" + k + "'");
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    std::string dump() const {
        std::ostringstream os;
        for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
        return os.str();
    }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace qrlab
