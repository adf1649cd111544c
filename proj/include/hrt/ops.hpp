#pragma once

#include <vector>

#include "hrt/tensor.hpp"

// Differentiable operations. Feature maps are (B, C, H, W); token sequences
// are (B, N, D). Apart from bias-add and the explicit per-sample/per-axis
// scaling ops below there is no implicit broadcasting: shapes must match.
namespace hrt::ops {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

// Scalar reductions, result shape (1).
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// (B, ...) -> (B, 1): sum over everything except the batch axis.
Tensor sum_per_sample(const Tensor& x);
// x (B, ...) times s (B, 1), broadcast over the trailing axes.
Tensor mul_per_sample(const Tensor& x, const Tensor& s);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
// Mean over one axis, keeping it as extent 1.
Tensor mean_axis(const Tensor& x, int axis);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

// Cross-correlation. `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding);
// x (..., Din) times weight (Dout, Din) transposed, plus bias (Dout). `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor global_avg_pool(const Tensor& x);
// align_corners = false.
Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

// Normalises over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// Normalises each sample over groups of C/groups channels and all positions.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// (B, C, H, W) <-> (B, H*W, C), raster order.
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& tokens, std::int64_t h, std::int64_t w);

// f (B,C,H,W) * gate_h (B,C,H,1) * gate_w (B,C,1,W).
Tensor coord_gate(const Tensor& f, const Tensor& gate_h, const Tensor& gate_w);

// Multi-head softmax attention inside non-overlapping window x window blocks
// of an h x w token grid. Edge blocks are smaller (padding is masked out, so
// padded positions never act as keys). q, k, v: (B, h*w, C).
Tensor window_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t h,
                        std::int64_t w, int heads, int window);

// Linear-complexity attention. Per head: softmax over channels of each query,
// softmax over tokens of each key channel, out = q' (k'^T v).
// q (B, Nq, C); k, v (B, Nkv, C). Never materialises an Nq x Nkv matrix.
Tensor efficient_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// tokens (B, N, D) + fixed (N*D, row-major) + level_table[level_of[n]] (L, D).
// `level_table` may be undefined.
Tensor add_position(const Tensor& tokens, const std::vector<double>& fixed,
                    const Tensor& level_table, const std::vector<int>& level_of);

// Elementwise numerically stable binary cross-entropy on logits; `target` is
// treated as a constant.
Tensor bce_with_logits(const Tensor& logits, const Tensor& target);

}  // namespace hrt::ops
