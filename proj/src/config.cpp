#include "hrt/config.hpp"

#include <map>
#include <sstream>

#include "hrt/text_config.hpp"

namespace hrt {

std::string to_string(Modality m) {
    switch (m) {
        case Modality::depth: return "depth";
        case Modality::thermal: return "thermal";
        case Modality::focal_stack: return "focal_stack";
    }
    return "depth";
}

Modality modality_from_string(const std::string& s) {
    if (s == "depth") return Modality::depth;
    if (s == "thermal") return Modality::thermal;
    if (s == "focal_stack" || s == "focal") return Modality::focal_stack;
    throw ConfigError("unknown modality '" + s + "' (expected depth, thermal or focal_stack)");
}

void ModelConfig::validate() const {
    for (int i = 0; i < 4; ++i) {
        if (branch_channels[i] <= 0) throw ConfigError("branch_channels must be strictly positive");
        if (attention_heads <= 0 || branch_channels[i] % attention_heads != 0) {
            throw ConfigError("branch_channels[" + std::to_string(i) + "] = " + std::to_string(branch_channels[i]) +
                              " is not divisible by attention_heads = " + std::to_string(attention_heads));
        }
        if (blocks_per_stage[i] < 0) throw ConfigError("blocks_per_stage must be non-negative");
    }
    if (input_h <= 0 || input_w <= 0 || input_h % 32 != 0 || input_w % 32 != 0) {
        throw ConfigError("input size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                          " must be positive and divisible by 32");
    }
    if (token_dim <= 0) throw ConfigError("token_dim must be positive");
    if (token_dim % 4 != 0) throw ConfigError("token_dim must be divisible by 4 (2D sinusoidal embedding)");
    if (fusion_heads <= 0 || token_dim % fusion_heads != 0) {
        throw ConfigError("token_dim must be divisible by fusion_heads");
    }
    if (triple_it_depth < 1) throw ConfigError("triple_it_depth must be >= 1");
    if (!(ffn_ratio > 0)) throw ConfigError("ffn_ratio must be positive");
    if (window_size < 1) throw ConfigError("window_size must be >= 1");
}

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.branch_channels = {16, 32, 64, 128};
    c.token_dim = 64;
    c.input_h = 64;
    c.input_w = 64;
    return c;
}

namespace {

template <class T>
std::string join4(const std::array<T, 4>& a) {
    std::ostringstream os;
    os << a[0] << ',' << a[1] << ',' << a[2] << ',' << a[3];
    return os.str();
}

}  // namespace

std::string ModelConfig::canonical_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "branch_channels = " << join4(branch_channels) << '\n'
       << "blocks_per_stage = " << join4(blocks_per_stage) << '\n'
       << "attention_heads = " << attention_heads << '\n'
       << "window_size = " << window_size << '\n'
       << "token_dim = " << token_dim << '\n'
       << "triple_it_depth = " << triple_it_depth << '\n'
       << "fusion_heads = " << fusion_heads << '\n'
       << "ffn_ratio = " << ffn_ratio << '\n'
       << "input_hw = " << input_h << ',' << input_w << '\n'
       << "modality = " << to_string(modality) << '\n';
    return os.str();
}

ModelConfig ModelConfig::from_canonical_text(const std::string& text) {
    const TextConfig doc = TextConfig::parse(text);
    ModelConfig c;
    apply_model_section(doc, "", c);
    c.validate();
    return c;
}

}  // namespace hrt
