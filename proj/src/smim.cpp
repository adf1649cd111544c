#include "hrt/smim.hpp"

#include <algorithm>

namespace hrt {

Smim::Smim(nn::Builder b, int channels) : hidden_(std::max(1, channels / 8)) {
    weight_conv = nn::Conv2d(b.sub("weights"), 2 * channels, 2, 3, 1, 1);
    coa_reduce = nn::Conv2d(b.sub("coa.reduce"), channels, hidden_, 1, 1, 0);
    coa_h = nn::Conv2d(b.sub("coa.h"), hidden_, channels, 1, 1, 0);
    coa_w = nn::Conv2d(b.sub("coa.w"), hidden_, channels, 1, 1, 0);
}

ModalityWeights Smim::modality_weights(const Tensor& f_r, const Tensor& f_s) const {
    if (f_r.shape() != f_s.shape()) {
        throw ShapeError("smim: f_r " + shape_str(f_r.shape()) + " and f_s " + shape_str(f_s.shape()) + " differ");
    }
    const Tensor two = ops::sigmoid(weight_conv(ops::concat({f_r, f_s}, 1)));
    const Tensor pooled = ops::global_avg_pool(two);  // (B,2)
    return {ops::slice(pooled, 1, 0, 1), ops::slice(pooled, 1, 1, 1)};
}

Tensor Smim::coordinate_attention(const Tensor& f) const {
    const auto b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
    const Tensor along_h = ops::mean_axis(f, 3);                                   // (B,C,h,1)
    const Tensor along_w = ops::reshape(ops::mean_axis(f, 2), {b, c, w, 1});       // (B,C,w,1)
    const Tensor mid = ops::gelu(coa_reduce(ops::concat({along_h, along_w}, 2)));  // (B,hid,h+w,1)
    const Tensor gate_h = ops::sigmoid(coa_h(ops::slice(mid, 2, 0, h)));
    const Tensor mid_w = ops::reshape(ops::slice(mid, 2, h, w), {b, hidden_, 1, w});
    const Tensor gate_w = ops::sigmoid(coa_w(mid_w));
    return ops::coord_gate(f, gate_h, gate_w);
}

Tensor Smim::operator()(const Tensor& f_r, const Tensor& f_s) const {
    const ModalityWeights mw = modality_weights(f_r, f_s);
    return ops::add(ops::mul_per_sample(f_r, mw.w_r), coordinate_attention(ops::mul_per_sample(f_s, mw.w_s)));
}

}  // namespace hrt
