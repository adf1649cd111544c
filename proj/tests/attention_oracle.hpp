#pragma once

#include <cmath>
#include <vector>

#include "hrt/tensor.hpp"

namespace hrt::testing {

// rho_q(Q) (rho_k(K)^T V) written as explicit loops over one sample and head.
inline std::vector<double> efficient_oracle(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    const auto b = q.dim(0), nq = q.dim(1), nk = k.dim(1), c = q.dim(2), d = c / heads;
    std::vector<double> out(q.numel(), 0.0);
    for (std::int64_t s = 0; s < b; ++s)
        for (int h = 0; h < heads; ++h) {
            auto Q = [&](std::int64_t t, std::int64_t j) { return q.at((s * nq + t) * c + h * d + j); };
            auto K = [&](std::int64_t t, std::int64_t j) { return k.at((s * nk + t) * c + h * d + j); };
            auto V = [&](std::int64_t t, std::int64_t j) { return v.at((s * nk + t) * c + h * d + j); };
            std::vector<double> ks(static_cast<std::size_t>(nk * d));
            for (std::int64_t j = 0; j < d; ++j) {
                double z = 0.0;
                for (std::int64_t t = 0; t < nk; ++t) z += std::exp(K(t, j));
                for (std::int64_t t = 0; t < nk; ++t) ks[t * d + j] = std::exp(K(t, j)) / z;
            }
            for (std::int64_t i = 0; i < nq; ++i) {
                double z = 0.0;
                for (std::int64_t j = 0; j < d; ++j) z += std::exp(Q(i, j));
                for (std::int64_t e = 0; e < d; ++e) {
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < d; ++j) {
                        double ctx = 0.0;
                        for (std::int64_t t = 0; t < nk; ++t) ctx += ks[t * d + j] * V(t, e);
                        acc += std::exp(Q(i, j)) / z * ctx;
                    }
                    out[(s * nq + i) * c + h * d + e] = acc;
                }
            }
        }
    return out;
}

inline Tensor permute_tokens(const Tensor& x, const std::vector<int>& perm) {
    const auto b = x.dim(0), n = x.dim(1), c = x.dim(2);
    std::vector<double> out(x.numel());
    for (std::int64_t s = 0; s < b; ++s)
        for (std::int64_t t = 0; t < n; ++t)
            for (std::int64_t j = 0; j < c; ++j) out[(s * n + t) * c + j] = x.at((s * n + perm[t]) * c + j);
    return Tensor(x.shape(), out);
}

}  // namespace hrt::testing
