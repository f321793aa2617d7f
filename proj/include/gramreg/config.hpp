#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "gramreg/errors.hpp"

namespace gramreg {

/// Ordered `key = value` pairs as used by config files and the dataset
/// metadata. Lines starting with '#' and blank lines are skipped.
class KeyValues {
public:
    void set(std::string key, std::string value) {
        for (auto& [k, v] : items_) {
            if (k == key) {
                v = std::move(value);
                return;
            }
        }
        items_.emplace_back(std::move(key), std::move(value));
    }

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : items_)
            if (k == key) return &v;
        return nullptr;
    }

    bool has(const std::string& key) const { return find(key) != nullptr; }

    const std::string& get(const std::string& key) const {
        const std::string* v = find(key);
        if (!v) throw FormatError("missing config key '" + key + "'");
        return *v;
    }

    std::uint64_t get_u64(const std::string& key) const {
        const std::string& v = get(key);
        try {
            std::size_t used = 0;
            const std::uint64_t r = std::stoull(v, &used);
            if (used != v.size()) throw FormatError("");
            return r;
        } catch (...) {
            throw FormatError("config key '" + key + "': '" + v + "' is not an integer");
        }
    }

    double get_double(const std::string& key) const {
        const std::string& v = get(key);
        try {
            std::size_t used = 0;
            const double r = std::stod(v, &used);
            if (used != v.size()) throw FormatError("");
            return r;
        } catch (...) {
            throw FormatError("config key '" + key + "': '" + v + "' is not a number");
        }
    }

    const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

private:
    std::vector<std::pair<std::string, std::string>> items_;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return s.substr(a, b - a);
}

}  // namespace detail

inline KeyValues parse_key_values(std::istream& in, const std::string& what = "config") {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw FormatError(what + " line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(t.substr(0, eq));
        if (key.empty())
            throw FormatError(what + " line " + std::to_string(lineno) + ": empty key");
        kv.set(key, detail::trim(t.substr(eq + 1)));
    }
    return kv;
}

inline void write_key_values(std::ostream& out, const KeyValues& kv) {
    for (const auto& [k, v] : kv.items()) out << k << " = " << v << "\n";
}

}  // namespace gramreg
