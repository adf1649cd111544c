#pragma once

#include <algorithm>
#include <cstdint>

#include "hrt/config.hpp"

namespace oracle {

// Layer-by-layer parameter and FLOP tally written from the architecture
// description, independent of the model code.
struct Sheet {
    std::int64_t params = 0, flops = 0;

    void conv(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t out_h, std::int64_t out_w, bool bias) {
        params += cout * cin * k * k + (bias ? cout : 0);
        flops += 2 * cout * cin * k * k * out_h * out_w;
    }
    void group_norm(std::int64_t c) { params += 2 * c; }
    void conv_gn(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t out_h, std::int64_t out_w) {
        conv(cin, cout, k, out_h, out_w, false);
        group_norm(cout);
    }
    void linear(std::int64_t rows, std::int64_t din, std::int64_t dout) {
        params += dout * din + dout;
        flops += 2 * rows * din * dout;
    }
    void layer_norm(std::int64_t d) { params += 2 * d; }
    // Windows tile the grid from the top-left corner; edge windows are cut short.
    void window_attention(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t window) {
        std::int64_t sy = 0, sx = 0;
        for (std::int64_t y = 0; y < h; y += window) sy += std::min(window, h - y) * std::min(window, h - y);
        for (std::int64_t x = 0; x < w; x += window) sx += std::min(window, w - x) * std::min(window, w - x);
        flops += 4 * c * sy * sx;  // QK^T and AV per head, summed over heads
    }
    void efficient_attention(std::int64_t nq, std::int64_t nk, std::int64_t c, std::int64_t heads) {
        const std::int64_t d = c / heads;
        flops += 2 * heads * d * d * (nq + nk);
    }
};

inline Sheet model_sheet(const hrt::ModelConfig& c) {
    Sheet s;
    const auto& ch = c.branch_channels;
    std::int64_t hs[4], ws[4], n[4], total = 0;
    for (int i = 0; i < 4; ++i) {
        hs[i] = c.input_h >> (2 + i);
        ws[i] = c.input_w >> (2 + i);
        n[i] = hs[i] * ws[i];
        total += n[i];
    }
    // Supplementary encoder.
    s.conv_gn(c.supplementary_channels(), ch[0], 3, c.input_h / 2, c.input_w / 2);
    s.conv_gn(ch[0], ch[0], 3, hs[0], ws[0]);
    for (int i = 0; i < 4; ++i) {
        const int cin = i == 0 ? ch[0] : ch[i - 1];
        s.conv_gn(cin, ch[i], 3, hs[i], ws[i]);
        s.conv_gn(ch[i], ch[i], 3, hs[i], ws[i]);
        if (cin != ch[i] || i > 0) s.conv_gn(cin, ch[i], 1, hs[i], ws[i]);
        s.conv_gn(ch[i], ch[i], 3, hs[i], ws[i]);
        s.conv_gn(ch[i], ch[i], 3, hs[i], ws[i]);
        s.conv(ch[i], ch[i], 1, hs[i], ws[i], true);
    }
    // Injection modules.
    for (int i = 0; i < 4; ++i) {
        const int hid = std::max(1, ch[i] / 8);
        s.conv(2 * ch[i], 2, 3, hs[i], ws[i], true);
        s.conv(ch[i], hid, 1, hs[i] + ws[i], 1, true);
        s.conv(hid, ch[i], 1, hs[i], 1, true);
        s.conv(hid, ch[i], 1, 1, ws[i], true);
    }
    // Primary backbone.
    s.conv_gn(3, ch[0], 3, c.input_h / 2, c.input_w / 2);
    s.conv_gn(ch[0], ch[0], 3, hs[0], ws[0]);
    for (int st = 0; st < 4; ++st) {
        if (st > 0) s.conv_gn(ch[st - 1], ch[st], 3, hs[st], ws[st]);
        for (int br = 0; br <= st; ++br) {
            for (int b = 0; b < c.blocks_per_stage[st]; ++b) {
                const std::int64_t hidden = static_cast<std::int64_t>(ch[br] * c.ffn_ratio);
                for (int l = 0; l < 4; ++l) s.linear(n[br], ch[br], ch[br]);
                s.window_attention(hs[br], ws[br], ch[br], c.window_size);
                s.layer_norm(ch[br]);
                s.layer_norm(ch[br]);
                s.linear(n[br], ch[br], hidden);
                s.linear(n[br], hidden, ch[br]);
            }
        }
        for (int i = 0; i <= st; ++i) {
            for (int j = 0; j <= st; ++j) {
                if (i < j) {
                    for (int k = i + 1; k <= j; ++k) s.conv_gn(ch[i], k == j ? ch[j] : ch[i], 3, hs[k], ws[k]);
                } else if (i > j) {
                    s.conv_gn(ch[i], ch[j], 1, hs[i], ws[i]);
                }
            }
        }
    }
    // Fusion.
    const int d = c.token_dim;
    for (int i = 0; i < 4; ++i) s.linear(n[i], ch[i], d);
    s.params += 4 * d;
    const std::int64_t hidden = static_cast<std::int64_t>(d * c.ffn_ratio);
    for (int i = 0; i < 4; ++i) {
        const std::int64_t asso = total - n[i];
        for (int l = 0; l < c.triple_it_depth; ++l) {
            for (int k = 0; k < 4; ++k) s.linear(n[i], d, d);
            s.efficient_attention(n[i], n[i], d, c.fusion_heads);
            s.linear(n[i], d, d);
            s.linear(asso, d, d);
            s.linear(asso, d, d);
            s.linear(n[i], d, d);
            s.efficient_attention(n[i], asso, d, c.fusion_heads);
            for (int k = 0; k < 3; ++k) s.layer_norm(d);
            s.linear(n[i], d, hidden);
            s.linear(n[i], hidden, d);
        }
    }
    // Head.
    s.conv(d, 1, 3, hs[0], ws[0], true);
    return s;
}

}  // namespace oracle
