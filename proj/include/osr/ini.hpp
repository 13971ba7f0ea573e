// Minimal `[section]` / `key = value` text format shared by manifests and
// run configs. `#` and `;` start comment lines; sections may repeat.
#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace osr {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct IniSection {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;

    std::optional<std::string> get(std::string_view key) const {
        std::optional<std::string> found;
        for (const auto& [k, v] : entries)
            if (k == key) found = v;
        return found;
    }

    std::vector<std::string> get_all(std::string_view key) const {
        std::vector<std::string> out;
        for (const auto& [k, v] : entries)
            if (k == key) out.push_back(v);
        return out;
    }

    void set(std::string key, std::string value) {
        for (auto& [k, v] : entries)
            if (k == key) {
                v = std::move(value);
                return;
            }
        entries.emplace_back(std::move(key), std::move(value));
    }
};

struct IniDocument {
    std::vector<IniSection> sections;

    const IniSection* find(std::string_view name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }

    IniSection& section(std::string_view name) {
        for (auto& s : sections)
            if (s.name == name) return s;
        sections.push_back(IniSection{std::string(name), {}});
        return sections.back();
    }

    std::vector<const IniSection*> find_all(std::string_view name) const {
        std::vector<const IniSection*> out;
        for (const auto& s : sections)
            if (s.name == name) out.push_back(&s);
        return out;
    }
};

namespace ini {

inline double to_double(std::string_view text, std::string_view key) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError(std::string(key) + ": not a number: '" + std::string(text) + "'");
    return v;
}

inline std::uint64_t to_uint(std::string_view text, std::string_view key) {
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end)
        throw ConfigError(std::string(key) + ": not a non-negative integer: '" + std::string(text) + "'");
    return v;
}

/// Comma-separated list of non-negative integers.
inline std::vector<std::size_t> to_uint_list(std::string_view text, std::string_view key) {
    std::vector<std::size_t> out;
    while (true) {
        const auto comma = text.find(',');
        auto item = text.substr(0, comma);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        out.push_back(static_cast<std::size_t>(to_uint(item, key)));
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return out;
}

inline std::string join(const std::vector<std::size_t>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(values[i]);
    }
    return out;
}

/// Shortest decimal form that reads back to the same double.
inline std::string format(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace ini

inline IniDocument parse_ini(std::istream& in, const std::string& where = "config") {
    auto trim = [](std::string_view s) {
        while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
        while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
        return s;
    };
    IniDocument doc;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        const auto text = trim(line);
        if (text.empty() || text.front() == '#' || text.front() == ';') continue;
        if (text.front() == '[') {
            if (text.back() != ']') throw ConfigError(where + ":" + std::to_string(row) + ": unterminated section header");
            doc.sections.push_back(IniSection{std::string(trim(text.substr(1, text.size() - 2))), {}});
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string_view::npos) throw ConfigError(where + ":" + std::to_string(row) + ": expected key = value");
        const auto key = trim(text.substr(0, eq));
        if (key.empty()) throw ConfigError(where + ":" + std::to_string(row) + ": empty key");
        if (doc.sections.empty()) doc.sections.push_back(IniSection{});
        doc.sections.back().entries.emplace_back(std::string(key), std::string(trim(text.substr(eq + 1))));
    }
    return doc;
}

inline IniDocument read_ini(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    return parse_ini(in, path.string());
}

inline void write_ini(std::ostream& out, const IniDocument& doc) {
    bool first = true;
    for (const auto& s : doc.sections) {
        if (!first) out << '\n';
        first = false;
        if (!s.name.empty()) out << '[' << s.name << "]\n";
        for (const auto& [k, v] : s.entries) out << k << " = " << v << '\n';
    }
}

}  // namespace osr
