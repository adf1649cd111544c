#pragma once

#include <array>
#include <stdexcept>
#include <string>

namespace hrt {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Modality { depth, thermal, focal_stack };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

// Focal stacks are zero-padded to this many RGB slices.
inline constexpr int kFocalSlices = 12;

// Architectural hyperparameters; the single source of truth for every shape
// and for the parameter set.
struct ModelConfig {
    std::array<int, 4> branch_channels{32, 64, 128, 256};  // strides 4/8/16/32
    std::array<int, 4> blocks_per_stage{1, 1, 2, 2};
    int attention_heads = 4;
    int window_size = 7;
    int token_dim = 128;
    int triple_it_depth = 2;
    int fusion_heads = 4;
    double ffn_ratio = 4.0;
    int input_h = 224;
    int input_w = 224;
    Modality modality = Modality::depth;

    // Throws ConfigError naming the violated constraint.
    void validate() const;

    int supplementary_channels() const { return modality == Modality::focal_stack ? 3 * kFocalSlices : 1; }
    int level_h(int level) const { return input_h / (4 << level); }
    int level_w(int level) const { return input_w / (4 << level); }

    // Desk-scale preset used for training runs: 64x64 input, channels
    // 16/32/64/128, 64-d tokens.
    static ModelConfig toy();

    // One `key = value` per line, fixed order; used inside checkpoints.
    std::string canonical_text() const;
    static ModelConfig from_canonical_text(const std::string& text);

    bool operator==(const ModelConfig&) const = default;
};

}  // namespace hrt
