#include "hrt/text_config.hpp"

#include <fstream>
#include <sstream>

namespace hrt {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <std::size_t N>
std::array<int, N> parse_ints(const std::string& key, const std::string& value) {
    std::array<int, N> out{};
    std::stringstream ss(value);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= N) throw ConfigError(key + ": expected " + std::to_string(N) + " comma-separated integers");
        try {
            std::size_t used = 0;
            out[i++] = std::stoi(trim(item), &used);
            if (used != trim(item).size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(key + ": '" + value + "' is not a list of integers");
        }
    }
    if (i != N) throw ConfigError(key + ": expected " + std::to_string(N) + " comma-separated integers");
    return out;
}

}  // namespace

TextConfig TextConfig::parse(const std::string& text) {
    TextConfig doc;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        if (doc.values_.count(full)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + full);
        doc.values_[full] = trim(line.substr(eq + 1));
    }
    return doc;
}

TextConfig TextConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

bool TextConfig::has(const std::string& key) const { return values_.count(key) != 0; }

std::string TextConfig::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_.insert(key);
    return it->second;
}

int TextConfig::get_int(const std::string& key, int fallback) const {
    if (!has(key)) return fallback;
    return parse_ints<1>(key, get_string(key, ""))[0];
}

double TextConfig::get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_string(key, "");
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": '" + v + "' is not a number");
    }
}

std::array<int, 4> TextConfig::get_int4(const std::string& key, const std::array<int, 4>& fallback) const {
    if (!has(key)) return fallback;
    return parse_ints<4>(key, get_string(key, ""));
}

std::array<int, 2> TextConfig::get_int2(const std::string& key, const std::array<int, 2>& fallback) const {
    if (!has(key)) return fallback;
    return parse_ints<2>(key, get_string(key, ""));
}

std::vector<std::string> TextConfig::unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
        if (!used_.count(k)) out.push_back(k);
    }
    return out;
}

void apply_model_section(const TextConfig& doc, const std::string& section, ModelConfig& c) {
    const std::string p = section.empty() ? "" : section + ".";
    c.branch_channels = doc.get_int4(p + "branch_channels", c.branch_channels);
    c.blocks_per_stage = doc.get_int4(p + "blocks_per_stage", c.blocks_per_stage);
    c.attention_heads = doc.get_int(p + "attention_heads", c.attention_heads);
    c.window_size = doc.get_int(p + "window_size", c.window_size);
    c.token_dim = doc.get_int(p + "token_dim", c.token_dim);
    c.triple_it_depth = doc.get_int(p + "triple_it_depth", c.triple_it_depth);
    c.fusion_heads = doc.get_int(p + "fusion_heads", c.fusion_heads);
    c.ffn_ratio = doc.get_double(p + "ffn_ratio", c.ffn_ratio);
    const auto hw = doc.get_int2(p + "input_hw", {c.input_h, c.input_w});
    c.input_h = hw[0];
    c.input_w = hw[1];
    c.modality = modality_from_string(doc.get_string(p + "modality", to_string(c.modality)));
}

}  // namespace hrt
