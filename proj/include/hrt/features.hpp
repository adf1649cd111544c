#pragma once

#include <array>

#include "hrt/config.hpp"
#include "hrt/tensor.hpp"

namespace hrt {

// Four feature maps at strides 4, 8, 16, 32.
struct MultiResFeatures {
    std::array<Tensor, 4> maps;

    Tensor& operator[](int i) { return maps[static_cast<std::size_t>(i)]; }
    const Tensor& operator[](int i) const { return maps[static_cast<std::size_t>(i)]; }
};

// Expected (B, C_i, H_i, W_i) of level i.
Shape level_shape(const ModelConfig& config, int level, std::int64_t batch);

// Throws ShapeError naming `what` and the level if any map is off-contract.
void check_features(const MultiResFeatures& f, const ModelConfig& config, std::int64_t batch, const char* what);

}  // namespace hrt
