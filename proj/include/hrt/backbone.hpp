#pragma once

#include <functional>
#include <vector>

#include "hrt/config.hpp"
#include "hrt/features.hpp"
#include "hrt/nn.hpp"

namespace hrt {

// Windowed multi-head self-attention then FFN, each followed by residual add
// and layer norm (post-norm). Operates on (B, C, h, w).
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(nn::Builder b, int channels, int heads, int window, double ffn_ratio);

    Tensor operator()(const Tensor& f) const;

    nn::Linear q, k, v, proj;
    nn::LayerNorm norm1, norm2;
    nn::Linear ffn1, ffn2;
    int heads = 1;
    int window = 1;
};

// Cross-resolution exchange over the first k branches. Output j is
// GELU(sum_i path_ij(x_i)): identity for i == j, strided 3x3 convs going down,
// 1x1 conv then bilinear upsampling going up.
class ExchangeUnit {
public:
    ExchangeUnit() = default;
    ExchangeUnit(nn::Builder b, const std::vector<int>& channels);

    std::vector<Tensor> operator()(const std::vector<Tensor>& x) const;

    int branches() const { return static_cast<int>(channels_.size()); }
    // paths[i][j]: empty for i == j; down chain for i < j; single 1x1 for i > j.
    std::vector<std::vector<std::vector<nn::ConvNormAct>>> paths;

private:
    std::vector<int> channels_;
};

// f^rs for the branch created at `stage`, given the primary feature entering
// that branch. The result is added to the entry feature.
using Injector = std::function<Tensor(int stage, const Tensor& f_r)>;

class Backbone {
public:
    Backbone() = default;
    Backbone(nn::Builder b, const ModelConfig& config);

    // (B,3,H,W) -> (B,C1,H/4,W/4)
    Tensor stem(const Tensor& image) const;

    // Runs the four stages. `inject` may be empty (no injection). When `taps`
    // is given, taps[i] receives the pre-injection entry feature of branch i.
    MultiResFeatures forward(const Tensor& image, const Injector& inject, MultiResFeatures* taps = nullptr) const;

    // Precomputed injections: stage_inputs[i] is added to branch i's entry.
    MultiResFeatures forward(const Tensor& image, const MultiResFeatures& stage_inputs) const;

    const ModelConfig& config() const { return config_; }

    std::vector<nn::ConvNormAct> stem_layers;
    std::vector<nn::ConvNormAct> transitions;  // transitions[s-1] creates branch s
    // blocks[s][branch][n]
    std::vector<std::vector<std::vector<TransformerBlock>>> blocks;
    std::vector<ExchangeUnit> exchanges;

private:
    ModelConfig config_;
};

}  // namespace hrt
