#include "hrt/fusion.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace hrt {

std::vector<TokenCoord> grid_coords(int level, int h, int w) {
    std::vector<TokenCoord> c;
    c.reserve(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) c.push_back({level, y, x, h, w});
    return c;
}

TokenSeq tokens_of(const Tensor& f, int level) {
    return {ops::to_tokens(f), grid_coords(level, static_cast<int>(f.dim(2)), static_cast<int>(f.dim(3)))};
}

TokenSeq project_tokens(const Tensor& f, const nn::Linear& proj, int level) {
    return {proj(ops::to_tokens(f)), grid_coords(level, static_cast<int>(f.dim(2)), static_cast<int>(f.dim(3)))};
}

TokenSeq flat_cat(const std::vector<TokenSeq>& parts) {
    if (parts.empty()) throw ShapeError("flat_cat: no parts");
    if (parts.size() == 1) return parts.front();
    std::vector<Tensor> ts;
    TokenSeq out;
    for (const auto& p : parts) {
        if (p.dim() != parts.front().dim()) {
            throw ShapeError("flat_cat: token widths differ (" + std::to_string(p.dim()) + " vs " +
                             std::to_string(parts.front().dim()) + ")");
        }
        ts.push_back(p.tokens);
        out.coords.insert(out.coords.end(), p.coords.begin(), p.coords.end());
    }
    out.tokens = ops::concat(ts, 1);
    return out;
}

std::vector<double> sinusoid_embedding(const std::vector<TokenCoord>& coords, int d) {
    if (d % 4 != 0) throw ShapeError("sinusoid_embedding: D must be divisible by 4");
    const int half = d / 2;
    std::vector<double> out(coords.size() * static_cast<std::size_t>(d));
    for (std::size_t t = 0; t < coords.size(); ++t) {
        const auto& c = coords[t];
        const double py = (c.y + 1.0) / c.h * 2.0 * std::numbers::pi;
        const double px = (c.x + 1.0) / c.w * 2.0 * std::numbers::pi;
        for (int i = 0; i < half; ++i) {
            const double freq = std::pow(10000.0, 2.0 * (i / 2) / half);
            const bool even = i % 2 == 0;
            out[t * d + i] = even ? std::sin(py / freq) : std::cos(py / freq);
            out[t * d + half + i] = even ? std::sin(px / freq) : std::cos(px / freq);
        }
    }
    return out;
}

PositionEmbedding::PositionEmbedding(nn::Builder b, int d) {
    // Small random start so levels are distinguishable from step one.
    level_table = b.uniform("level_table", {4, d}, 4 * d);
}

TokenSeq PositionEmbedding::operator()(const TokenSeq& seq) const {
    std::vector<int> level_of;
    level_of.reserve(seq.coords.size());
    for (const auto& c : seq.coords) level_of.push_back(c.level);
    return {ops::add_position(seq.tokens, sinusoid_embedding(seq.coords, static_cast<int>(seq.dim())), level_table,
                              level_of),
            seq.coords};
}

Attention::Attention(nn::Builder b, int d, int heads_)
    : q(b.sub("q"), d, d), k(b.sub("k"), d, d), v(b.sub("v"), d, d), out(b.sub("out"), d, d), heads(heads_) {}

Tensor Attention::operator()(const Tensor& x, const Tensor& context) const {
    return out(ops::efficient_attention(q(x), k(context), v(context), heads));
}

TripleItLayer::TripleItLayer(nn::Builder b, int d, int heads, double ffn_ratio)
    : sa(b.sub("sa"), d, heads),
      ca(b.sub("ca"), d, heads),
      norm1(b.sub("norm1"), d),
      norm2(b.sub("norm2"), d),
      norm3(b.sub("norm3"), d) {
    const int hidden = static_cast<int>(d * ffn_ratio);
    ffn1 = nn::Linear(b.sub("ffn1"), d, hidden);
    ffn2 = nn::Linear(b.sub("ffn2"), hidden, d);
}

Tensor TripleItLayer::self_attend(const Tensor& x) const { return norm1(ops::add(x, sa(x, x))); }

Tensor TripleItLayer::cross_attend(const Tensor& x, const Tensor& asso) const {
    return norm2(ops::add(x, ca(x, asso)));
}

Tensor TripleItLayer::feed_forward(const Tensor& x) const {
    return norm3(ops::add(x, ffn2(ops::gelu(ffn1(x)))));
}

Tensor TripleItLayer::operator()(const Tensor& x, const Tensor& asso) const {
    return feed_forward(cross_attend(self_attend(x), asso));
}

TripleIt::TripleIt(nn::Builder b, int d, int heads, double ffn_ratio, int depth) {
    for (int l = 0; l < depth; ++l) layers.emplace_back(b.sub("layer" + std::to_string(l + 1)), d, heads, ffn_ratio);
}

Tensor TripleIt::operator()(const Tensor& primary, const Tensor& asso) const {
    Tensor x = primary;
    for (const auto& layer : layers) x = layer(x, asso);
    return x;
}

const TokenSeq& FusionState::decoded(int level) const {
    if (level < 0 || level > 3 || !dec[static_cast<std::size_t>(level)]) {
        throw std::logic_error("fusion: decoded feature of level " + std::to_string(level + 1) +
                               " read before it was produced");
    }
    return *dec[static_cast<std::size_t>(level)];
}

Tensor FusionState::decoded_map(int level) const {
    const TokenSeq& s = decoded(level);
    return ops::from_tokens(s.tokens, s.coords.front().h, s.coords.front().w);
}

std::vector<AssoMember> asso_members(int level) {
    std::vector<AssoMember> m;
    for (int j = 0; j < 4; ++j) {
        if (j < level) m.push_back({j, false});
        if (j > level) m.push_back({j, true});
    }
    return m;
}

Fusion::Fusion(nn::Builder b, const ModelConfig& config) : config_(config) {
    const int d = config.token_dim;
    for (int i = 0; i < 4; ++i) {
        proj[i] = nn::Linear(b.sub("proj" + std::to_string(i + 1)), config.branch_channels[i], d);
    }
    position = PositionEmbedding(b.sub("position"), d);
    for (int i = 0; i < 4; ++i) {
        units[i] = TripleIt(b.sub("T" + std::to_string(i + 1)), d, config.fusion_heads, config.ffn_ratio,
                            config.triple_it_depth);
    }
}

FusionState Fusion::operator()(const MultiResFeatures& f_o, bool use_position) const {
    FusionState st;
    st.f_o = f_o;
    for (int i = 0; i < 4; ++i) st.primary[i] = project_tokens(f_o[i], proj[i], i);
    const auto embed = [&](const TokenSeq& s) { return use_position ? position(s) : s; };
    for (int i = 3; i >= 0; --i) {
        std::vector<TokenSeq> parts;
        for (const auto& m : asso_members(i)) parts.push_back(m.decoded ? st.decoded(m.level) : st.primary[m.level]);
        const TokenSeq asso = embed(flat_cat(parts));
        const TokenSeq prim = embed(st.primary[i]);
        st.asso_tokens[i] = asso.size();
        st.dec[i] = TokenSeq{units[i](prim.tokens, asso.tokens), st.primary[i].coords};
        st.order.push_back(i);
    }
    return st;
}

}  // namespace hrt
