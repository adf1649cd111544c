#pragma once

#include <vector>

#include "hrt/config.hpp"
#include "hrt/features.hpp"
#include "hrt/nn.hpp"

namespace hrt {

struct SupplementaryInput {
    Modality kind = Modality::depth;
    Tensor data;  // (B, 1, H, W) or (B, 36, H, W) for focal stacks

    // Depth or thermal map (B,1,H,W).
    static SupplementaryInput single(Modality kind, Tensor map);
    // K <= 12 RGB slices, each (B,3,H,W), concatenated and zero-padded to 12.
    static SupplementaryInput focal(const std::vector<Tensor>& slices);

    // Throws ShapeError/ConfigError if the invariants do not hold for an h x w primary image.
    void validate(std::int64_t h, std::int64_t w) const;
};

// Concatenates K slices channel-wise and appends 12-K all-zero slices.
// Throws ConfigError if K > 12 or K == 0.
Tensor pad_focal_stack(const std::vector<Tensor>& slices);

// Residual block: conv3x3-GN-GELU-conv3x3-GN plus shortcut, then GELU.
// The shortcut is a strided 1x1 conv + GN when shape changes.
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(nn::Builder b, int cin, int cout, int stride);
    Tensor operator()(const Tensor& x) const;

    nn::ConvNormAct conv1, conv2;
    bool has_shortcut = false;
    nn::ConvNormAct shortcut;
};

// Residual encoder for the supplementary modality. Convolutions carry no bias
// and norm shifts start at zero, so an all-zero input gives all-zero features
// at initialisation.
class AuxStream {
public:
    AuxStream() = default;
    AuxStream(nn::Builder b, const ModelConfig& config);

    MultiResFeatures operator()(const SupplementaryInput& x) const;

    std::vector<nn::ConvNormAct> stem;
    std::vector<std::vector<ResidualBlock>> stages;
    std::vector<nn::Conv2d> projections;

private:
    ModelConfig config_;
};

}  // namespace hrt
