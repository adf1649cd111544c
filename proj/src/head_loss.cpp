#include "hrt/head_loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hrt {

Head::Head(nn::Builder b, int d) : conv(b.sub("conv"), d, 1, 3, 1, 1) {}

SaliencyMap Head::operator()(const Tensor& f1) const {
    const Tensor logits = ops::bilinear_resize(conv(f1), 4 * f1.dim(2), 4 * f1.dim(3));
    return {logits, ops::sigmoid(logits)};
}

int ppa_window(std::int64_t h, std::int64_t w) {
    int k = static_cast<int>(std::min(h, w) / 7);
    if (k % 2 == 0) --k;
    return std::clamp(k, 3, 31);
}

std::vector<double> ppa_weights(const Tensor& gt, int window) {
    const auto b = gt.dim(0), hh = gt.dim(2), ww = gt.dim(3);
    const auto g = gt.data();
    const int r = window / 2;
    // Summed-area table per sample.
    std::vector<double> sat(static_cast<std::size_t>((hh + 1) * (ww + 1)));
    std::vector<double> omega(gt.numel());
    for (std::int64_t s = 0; s < b; ++s) {
        const double* gs = g.data() + s * hh * ww;
        for (std::int64_t y = 0; y < hh; ++y)
            for (std::int64_t x = 0; x < ww; ++x)
                sat[(y + 1) * (ww + 1) + x + 1] = gs[y * ww + x] + sat[y * (ww + 1) + x + 1] +
                                                 sat[(y + 1) * (ww + 1) + x] - sat[y * (ww + 1) + x];
        for (std::int64_t y = 0; y < hh; ++y) {
            const std::int64_t y0 = std::max<std::int64_t>(0, y - r), y1 = std::min<std::int64_t>(hh, y + r + 1);
            for (std::int64_t x = 0; x < ww; ++x) {
                const std::int64_t x0 = std::max<std::int64_t>(0, x - r), x1 = std::min<std::int64_t>(ww, x + r + 1);
                const double total = sat[y1 * (ww + 1) + x1] - sat[y0 * (ww + 1) + x1] - sat[y1 * (ww + 1) + x0] +
                                     sat[y0 * (ww + 1) + x0];
                const double avg = total / static_cast<double>((y1 - y0) * (x1 - x0));
                omega[s * hh * ww + y * ww + x] = 1.0 + 5.0 * std::abs(avg - gs[y * ww + x]);
            }
        }
    }
    return omega;
}

Tensor ppa_loss(const Tensor& logits, const Tensor& gt) { return ppa_loss(logits, gt, ppa_window(gt.dim(2), gt.dim(3))); }

Tensor ppa_loss(const Tensor& logits, const Tensor& gt, int window) {
    if (logits.shape() != gt.shape() || gt.rank() != 4 || gt.dim(1) != 1) {
        throw ShapeError("ppa_loss: logits " + shape_str(logits.shape()) + " and gt " + shape_str(gt.shape()) +
                         " must both be (B,1,H,W)");
    }
    for (double v : gt.data()) {
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("ppa_loss: ground truth must be binary");
    }
    const Tensor omega(gt.shape(), ppa_weights(gt, window));
    const Tensor g = gt.detach();
    const Tensor p = ops::sigmoid(logits);

    const Tensor wbce = ops::div(ops::sum_per_sample(ops::mul(omega, ops::bce_with_logits(logits, g))),
                                 ops::sum_per_sample(omega));
    const Tensor inter = ops::sum_per_sample(ops::mul(omega, ops::mul(p, g)));
    const Tensor total = ops::sum_per_sample(ops::mul(omega, ops::add(p, g)));
    const Tensor wiou = ops::scale(
        ops::div(ops::add_scalar(inter, 1.0), ops::add_scalar(ops::sub(total, inter), 1.0)), -1.0);
    return ops::mean(ops::add_scalar(ops::add(wbce, wiou), 1.0));
}

}  // namespace hrt
