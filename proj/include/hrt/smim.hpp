#pragma once

#include "hrt/nn.hpp"

namespace hrt {

struct ModalityWeights {
    Tensor w_r;  // (B,1)
    Tensor w_s;  // (B,1)
};

// Supplementary modality injection for one level:
// f_rs = w_r * f_r + CoA(w_s * f_s).
class Smim {
public:
    Smim() = default;
    Smim(nn::Builder b, int channels);

    // cat(f_r, f_s) -> 3x3 conv to 2 channels -> split -> sigmoid -> global mean.
    ModalityWeights modality_weights(const Tensor& f_r, const Tensor& f_s) const;
    // Coordinate attention with reduction 8 (hidden width clamped to >= 1).
    Tensor coordinate_attention(const Tensor& f) const;
    Tensor operator()(const Tensor& f_r, const Tensor& f_s) const;

    int hidden() const { return hidden_; }

    nn::Conv2d weight_conv;
    nn::Conv2d coa_reduce;
    nn::Conv2d coa_h;
    nn::Conv2d coa_w;

private:
    int hidden_ = 1;
};

}  // namespace hrt
