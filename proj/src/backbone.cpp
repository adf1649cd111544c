#include "hrt/backbone.hpp"

#include <string>

namespace hrt {

TransformerBlock::TransformerBlock(nn::Builder b, int channels, int heads_, int window_, double ffn_ratio)
    : q(b.sub("attn.q"), channels, channels),
      k(b.sub("attn.k"), channels, channels),
      v(b.sub("attn.v"), channels, channels),
      proj(b.sub("attn.proj"), channels, channels),
      norm1(b.sub("norm1"), channels),
      norm2(b.sub("norm2"), channels),
      heads(heads_),
      window(window_) {
    const int hidden = static_cast<int>(channels * ffn_ratio);
    ffn1 = nn::Linear(b.sub("ffn1"), channels, hidden);
    ffn2 = nn::Linear(b.sub("ffn2"), hidden, channels);
}

Tensor TransformerBlock::operator()(const Tensor& f) const {
    const auto h = f.dim(2), w = f.dim(3);
    const Tensor x = ops::to_tokens(f);
    const Tensor a = ops::window_attention(q(x), k(x), v(x), h, w, heads, window);
    const Tensor y = norm1(ops::add(x, proj(a)));
    const Tensor z = norm2(ops::add(y, ffn2(ops::gelu(ffn1(y)))));
    return ops::from_tokens(z, h, w);
}

ExchangeUnit::ExchangeUnit(nn::Builder b, const std::vector<int>& channels) : channels_(channels) {
    const int k = branches();
    paths.assign(k, std::vector<std::vector<nn::ConvNormAct>>(k));
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            nn::Builder pb = b.sub(std::to_string(i + 1) + "to" + std::to_string(j + 1));
            if (i < j) {
                for (int s = 0; s < j - i; ++s) {
                    const bool last = s == j - i - 1;
                    paths[i][j].emplace_back(pb.sub(std::to_string(s)), channels[i], last ? channels[j] : channels[i], 3,
                                             2, 1, !last);
                }
            } else if (i > j) {
                paths[i][j].emplace_back(pb, channels[i], channels[j], 1, 1, 0, false);
            }
        }
    }
}

std::vector<Tensor> ExchangeUnit::operator()(const std::vector<Tensor>& x) const {
    const int k = branches();
    if (static_cast<int>(x.size()) != k) throw ShapeError("exchange: branch count mismatch");
    std::vector<Tensor> out;
    for (int j = 0; j < k; ++j) {
        Tensor acc = x[j];
        for (int i = 0; i < k; ++i) {
            if (i == j) continue;
            Tensor p = x[i];
            for (const auto& layer : paths[i][j]) p = layer(p);
            if (i > j) p = ops::bilinear_resize(p, x[j].dim(2), x[j].dim(3));
            acc = ops::add(acc, p);
        }
        out.push_back(ops::gelu(acc));
    }
    return out;
}

Backbone::Backbone(nn::Builder b, const ModelConfig& config) : config_(config) {
    config.validate();
    const auto& ch = config.branch_channels;
    stem_layers.emplace_back(b.sub("stem.0"), 3, ch[0], 3, 2, 1);
    stem_layers.emplace_back(b.sub("stem.1"), ch[0], ch[0], 3, 2, 1);
    blocks.resize(4);
    for (int s = 0; s < 4; ++s) {
        nn::Builder sb = b.sub("stage" + std::to_string(s + 1));
        if (s > 0) transitions.emplace_back(sb.sub("transition"), ch[s - 1], ch[s], 3, 2, 1);
        blocks[s].resize(s + 1);
        for (int br = 0; br <= s; ++br) {
            for (int n = 0; n < config.blocks_per_stage[s]; ++n) {
                blocks[s][br].emplace_back(
                    sb.sub("branch" + std::to_string(br + 1) + ".block" + std::to_string(n + 1)), ch[br],
                    config.attention_heads, config.window_size, config.ffn_ratio);
            }
        }
        exchanges.emplace_back(sb.sub("exchange"), std::vector<int>(ch.begin(), ch.begin() + s + 1));
    }
}

Tensor Backbone::stem(const Tensor& image) const {
    if (image.rank() != 4 || image.dim(1) != 3) {
        throw ShapeError("stem: expected (B,3,H,W), got " + shape_str(image.shape()));
    }
    if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0) {
        throw ConfigError("stem: input " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                          " is not divisible by 32");
    }
    Tensor x = image;
    for (const auto& l : stem_layers) x = l(x);
    return x;
}

MultiResFeatures Backbone::forward(const Tensor& image, const Injector& inject, MultiResFeatures* taps) const {
    if (image.dim(2) != config_.input_h || image.dim(3) != config_.input_w) {
        throw ShapeError("backbone: image " + shape_str(image.shape()) + " does not match configured input size");
    }
    std::vector<Tensor> branches;
    for (int s = 0; s < 4; ++s) {
        Tensor entry = s == 0 ? stem(image) : transitions[s - 1](branches.back());
        if (taps) (*taps)[s] = entry;
        if (inject) {
            Tensor f_rs = inject(s, entry);
            if (!f_rs.defined() || f_rs.shape() != entry.shape()) {
                throw ShapeError("backbone: injection at stage " + std::to_string(s + 1) + ", branch " +
                                 std::to_string(s + 1) + " expected " + shape_str(entry.shape()) + ", got " +
                                 (f_rs.defined() ? shape_str(f_rs.shape()) : "nothing"));
            }
            entry = ops::add(entry, f_rs);
        }
        branches.push_back(entry);
        for (int br = 0; br <= s; ++br) {
            for (const auto& blk : blocks[s][br]) branches[br] = blk(branches[br]);
        }
        branches = exchanges[s](branches);
    }
    MultiResFeatures out;
    for (int i = 0; i < 4; ++i) out[i] = branches[i];
    return out;
}

MultiResFeatures Backbone::forward(const Tensor& image, const MultiResFeatures& stage_inputs) const {
    return forward(image, [&](int stage, const Tensor&) { return stage_inputs[stage]; });
}

}  // namespace hrt
