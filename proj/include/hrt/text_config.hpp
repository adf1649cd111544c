#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hrt/config.hpp"

namespace hrt {

// Flat `key = value` text with optional `[section]` headers and `#` comments.
// Keys are addressed as "section.key" ("key" before any header).
class TextConfig {
public:
    static TextConfig parse(const std::string& text);
    static TextConfig load(const std::string& path);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::array<int, 4> get_int4(const std::string& key, const std::array<int, 4>& fallback) const;
    std::array<int, 2> get_int2(const std::string& key, const std::array<int, 2>& fallback) const;

    // Keys present in the text that no getter asked for.
    std::vector<std::string> unused_keys() const;

private:
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

// Reads the ModelConfig keys found under `section` (empty for top level),
// leaving defaults for absent keys.
void apply_model_section(const TextConfig& doc, const std::string& section, ModelConfig& config);

}  // namespace hrt
