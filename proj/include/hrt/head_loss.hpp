#pragma once

#include "hrt/nn.hpp"

namespace hrt {

struct SaliencyMap {
    Tensor logits;  // (B,1,H,W)
    Tensor prob;    // sigmoid(logits)
};

// 3x3 conv to one channel, bilinear 4x upsampling, sigmoid.
class Head {
public:
    Head() = default;
    Head(nn::Builder b, int d);

    SaliencyMap operator()(const Tensor& f1) const;

    nn::Conv2d conv;
};

// Pooling window for the boundary weight: 31 at 224 and above, scaled to
// about min(H,W)/7 (odd, at least 3) for smaller inputs.
int ppa_window(std::int64_t h, std::int64_t w);

// omega = 1 + 5 |avgpool_k(gt) - gt|, stride 1, k/2 zero padding, mean over
// the in-bounds cells only. gt (B,1,H,W), returned flat.
std::vector<double> ppa_weights(const Tensor& gt, int window);

// Weighted BCE (normalised by sum omega) plus weighted IoU
// 1 - (sum w p g + 1) / (sum w (p + g - p g) + 1), averaged over the batch.
// Throws std::invalid_argument if gt is not binary.
Tensor ppa_loss(const Tensor& logits, const Tensor& gt);
Tensor ppa_loss(const Tensor& logits, const Tensor& gt, int window);

}  // namespace hrt
