#include "hrt/aux_stream.hpp"

#include <string>

namespace hrt {

SupplementaryInput SupplementaryInput::single(Modality kind, Tensor map) {
    if (kind == Modality::focal_stack) throw ConfigError("focal stacks are built from slices");
    if (map.rank() != 4 || map.dim(1) != 1) {
        throw ShapeError("supplementary " + to_string(kind) + " map must be (B,1,H,W), got " + shape_str(map.shape()));
    }
    return {kind, std::move(map)};
}

SupplementaryInput SupplementaryInput::focal(const std::vector<Tensor>& slices) {
    return {Modality::focal_stack, pad_focal_stack(slices)};
}

void SupplementaryInput::validate(std::int64_t h, std::int64_t w) const {
    const std::int64_t want_c = kind == Modality::focal_stack ? 3 * kFocalSlices : 1;
    if (!data.defined() || data.rank() != 4 || data.dim(1) != want_c) {
        throw ShapeError("supplementary " + to_string(kind) + " input must have " + std::to_string(want_c) +
                         " channels, got " + (data.defined() ? shape_str(data.shape()) : "nothing"));
    }
    if (data.dim(2) != h || data.dim(3) != w) {
        throw ShapeError("supplementary input " + shape_str(data.shape()) + " does not match primary size " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
}

Tensor pad_focal_stack(const std::vector<Tensor>& slices) {
    if (slices.empty()) throw ConfigError("focal stack has no slices");
    if (static_cast<int>(slices.size()) > kFocalSlices) {
        throw ConfigError("focal stack has " + std::to_string(slices.size()) + " slices; at most " +
                          std::to_string(kFocalSlices) + " are supported");
    }
    const Shape& s0 = slices.front().shape();
    for (const auto& s : slices) {
        if (s.rank() != 4 || s.dim(1) != 3 || s.shape() != s0) {
            throw ShapeError("focal slices must all be (B,3,H,W) of one size, got " + shape_str(s.shape()));
        }
    }
    std::vector<Tensor> parts(slices);
    if (parts.size() < static_cast<std::size_t>(kFocalSlices)) {
        parts.push_back(Tensor::zeros({s0[0], 3 * (kFocalSlices - static_cast<std::int64_t>(slices.size())), s0[2], s0[3]}));
    }
    return ops::concat(parts, 1);
}

ResidualBlock::ResidualBlock(nn::Builder b, int cin, int cout, int stride)
    : conv1(b.sub("conv1"), cin, cout, 3, stride, 1, true), conv2(b.sub("conv2"), cout, cout, 3, 1, 1, false) {
    if (stride != 1 || cin != cout) {
        has_shortcut = true;
        shortcut = nn::ConvNormAct(b.sub("shortcut"), cin, cout, 1, stride, 0, false);
    }
}

Tensor ResidualBlock::operator()(const Tensor& x) const {
    const Tensor y = conv2(conv1(x));
    return ops::gelu(ops::add(y, has_shortcut ? shortcut(x) : x));
}

AuxStream::AuxStream(nn::Builder b, const ModelConfig& config) : config_(config) {
    config.validate();
    const auto& ch = config.branch_channels;
    stem.emplace_back(b.sub("stem.0"), config.supplementary_channels(), ch[0], 3, 2, 1);
    stem.emplace_back(b.sub("stem.1"), ch[0], ch[0], 3, 2, 1);
    stages.resize(4);
    for (int s = 0; s < 4; ++s) {
        nn::Builder sb = b.sub("stage" + std::to_string(s + 1));
        const int cin = s == 0 ? ch[0] : ch[s - 1];
        stages[s].emplace_back(sb.sub("block1"), cin, ch[s], s == 0 ? 1 : 2);
        stages[s].emplace_back(sb.sub("block2"), ch[s], ch[s], 1);
        projections.emplace_back(sb.sub("proj"), ch[s], ch[s], 1, 1, 0);
        nn::fill(projections.back().bias, 0.0);
    }
}

MultiResFeatures AuxStream::operator()(const SupplementaryInput& x) const {
    if (x.kind != config_.modality) {
        throw ConfigError("aux stream built for " + to_string(config_.modality) + " but given " + to_string(x.kind));
    }
    x.validate(config_.input_h, config_.input_w);
    Tensor h = x.data;
    for (const auto& l : stem) h = l(h);
    MultiResFeatures out;
    for (int s = 0; s < 4; ++s) {
        for (const auto& blk : stages[s]) h = blk(h);
        out[s] = projections[s](h);
    }
    return out;
}

}  // namespace hrt
