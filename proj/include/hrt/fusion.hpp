#pragma once

#include <array>
#include <optional>
#include <vector>

#include "hrt/config.hpp"
#include "hrt/features.hpp"
#include "hrt/nn.hpp"

namespace hrt {

// Source position of a token: level (0-based, stride 4<<level) and its cell in
// that level's h x w grid.
struct TokenCoord {
    int level = 0;
    int y = 0;
    int x = 0;
    int h = 1;
    int w = 1;
    bool operator==(const TokenCoord&) const = default;
};

struct TokenSeq {
    Tensor tokens;  // (B, N, D)
    std::vector<TokenCoord> coords;

    std::int64_t size() const { return tokens.dim(1); }
    std::int64_t dim() const { return tokens.dim(2); }
};

// Raster coordinates of an h x w grid at `level`.
std::vector<TokenCoord> grid_coords(int level, int h, int w);

// (B,D,h,w) feature already at token width -> TokenSeq.
TokenSeq tokens_of(const Tensor& f, int level);

// 1x1 projection to D channels, then raster flattening.
TokenSeq project_tokens(const Tensor& f, const nn::Linear& proj, int level);

// Token-axis concatenation. Throws ShapeError on mixed D or batch.
TokenSeq flat_cat(const std::vector<TokenSeq>& parts);

// Fixed 2D sine embedding, (N*D) row-major. The first D/2 channels encode y,
// the rest x; within each half even channels are sin and odd channels cos of
// pos / 10000^(2*floor(i/2)/(D/2)), with pos = (y+1)/h * 2pi (x analogous).
std::vector<double> sinusoid_embedding(const std::vector<TokenCoord>& coords, int d);

// Sine embedding plus a learned (4, D) per-level table.
class PositionEmbedding {
public:
    PositionEmbedding() = default;
    PositionEmbedding(nn::Builder b, int d);

    TokenSeq operator()(const TokenSeq& seq) const;

    Tensor level_table;
};

// Efficient attention with input and output projections; q from `x`, k and v
// from `context`.
class Attention {
public:
    Attention() = default;
    Attention(nn::Builder b, int d, int heads);

    Tensor operator()(const Tensor& x, const Tensor& context) const;

    nn::Linear q, k, v, out;
    int heads = 1;
};

// One SA -> CA -> FFN layer, each followed by residual add and layer norm.
class TripleItLayer {
public:
    TripleItLayer() = default;
    TripleItLayer(nn::Builder b, int d, int heads, double ffn_ratio);

    Tensor self_attend(const Tensor& x) const;
    Tensor cross_attend(const Tensor& x, const Tensor& asso) const;
    Tensor feed_forward(const Tensor& x) const;
    Tensor operator()(const Tensor& x, const Tensor& asso) const;

    Attention sa, ca;
    nn::LayerNorm norm1, norm2, norm3;
    nn::Linear ffn1, ffn2;
};

class TripleIt {
public:
    TripleIt() = default;
    TripleIt(nn::Builder b, int d, int heads, double ffn_ratio, int depth);

    // Returns tokens with the primary's shape.
    Tensor operator()(const Tensor& primary, const Tensor& asso) const;

    std::vector<TripleItLayer> layers;
};

struct FusionState {
    MultiResFeatures f_o;
    std::array<TokenSeq, 4> primary;             // projected f^o tokens
    std::array<std::optional<TokenSeq>, 4> dec;  // decoded tokens
    std::vector<int> order;                      // levels in execution order
    std::array<std::int64_t, 4> asso_tokens{};

    // Throws std::logic_error if level i has not been decoded yet.
    const TokenSeq& decoded(int level) const;
    // Decoded tokens reshaped to (B, D, h_i, w_i).
    Tensor decoded_map(int level) const;
};

// Associated sources of the unit at `level`: backbone outputs above it
// (higher resolution) and decoded outputs below it.
struct AssoMember {
    int level;
    bool decoded;
};
std::vector<AssoMember> asso_members(int level);

class Fusion {
public:
    Fusion() = default;
    Fusion(nn::Builder b, const ModelConfig& config);

    // Decodes levels 4, 3, 2, 1 in turn.
    FusionState operator()(const MultiResFeatures& f_o, bool position = true) const;

    std::array<nn::Linear, 4> proj;
    PositionEmbedding position;
    std::array<TripleIt, 4> units;

private:
    ModelConfig config_;
};

}  // namespace hrt
