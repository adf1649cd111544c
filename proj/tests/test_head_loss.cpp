#include <cmath>

#include "doctest.h"
#include "hrt/gradcheck.hpp"
#include "hrt/head_loss.hpp"
#include "test_util.hpp"

using namespace hrt;
using hrt::testing::random_tensor;
using hrt::testing::set_all;

namespace {

Tensor binary_map(const Shape& s, Rng& rng, double p = 0.4) {
    std::vector<double> v(static_cast<std::size_t>(numel_of(s)));
    for (auto& x : v) x = rng.uniform() < p ? 1.0 : 0.0;
    return Tensor(s, v);
}

// Both weighted terms evaluated one pixel at a time for a single map.
double loss_oracle(const std::vector<double>& z, const std::vector<double>& g, int h, int w, int k) {
    const int r = k / 2;
    double wsum = 0, wbce = 0, inter = 0, uni = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            int cnt = 0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    acc += g[yy * w + xx];
                    ++cnt;
                }
            const double gi = g[y * w + x];
            const double om = 1 + 5 * std::abs(acc / cnt - gi);
            const double p = 1 / (1 + std::exp(-z[y * w + x]));
            wsum += om;
            wbce += om * -(gi * std::log(p) + (1 - gi) * std::log(1 - p));
            inter += om * p * gi;
            uni += om * (p + gi - p * gi);
        }
    return wbce / wsum + 1 - (inter + 1) / (uni + 1);
}

}  // namespace

TEST_CASE("head upsamples by four into a probability map") {
    nn::ParamStore ps;
    Rng rng(1);
    Head head(nn::Builder(ps, rng), 16);
    Rng data(2);
    NoGradGuard ng;
    const auto m = head(random_tensor({1, 16, 56, 56}, data, -3, 3));
    CHECK(m.logits.shape() == Shape{1, 1, 224, 224});
    for (double p : m.prob.data()) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
    set_all(head.conv.bias, -0.8);
    const auto z = head(Tensor::zeros({2, 16, 5, 3}));
    CHECK(z.prob.shape() == Shape{2, 1, 20, 12});
    for (double p : z.prob.data()) CHECK(p == doctest::Approx(1.0 / (1.0 + std::exp(0.8))).epsilon(1e-15));
}

TEST_CASE("pooling window scales with input size") {
    CHECK(ppa_window(224, 224) == 31);
    CHECK(ppa_window(352, 352) == 31);
    CHECK(ppa_window(64, 64) == 9);
    CHECK(ppa_window(64, 128) == 9);
    CHECK(ppa_window(16, 16) == 3);
}

TEST_CASE("perfect prediction has near-zero loss") {
    Rng data(3);
    const Tensor g = binary_map({2, 1, 16, 16}, data);
    std::vector<double> z(g.numel());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = g.at(i) > 0.5 ? 20.0 : -20.0;
    CHECK(ppa_loss(Tensor(g.shape(), z), g).item() < 1e-6);
}

TEST_CASE("boundary weights") {
    for (double v : ppa_weights(Tensor::full({1, 1, 9, 9}, 1.0), 5)) CHECK(v == 1.0);
    for (double v : ppa_weights(Tensor::zeros({1, 1, 9, 9}), 31)) CHECK(v == 1.0);

    // An object in one corner of a 64 x 64 map: pixels whose 31 x 31
    // neighbourhood misses it keep unit weight.
    std::vector<double> g(64 * 64, 0.0);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) g[y * 64 + x] = 1.0;
    const auto om = ppa_weights(Tensor({1, 1, 64, 64}, g), 31);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            CHECK(om[y * 64 + x] >= 1.0);
            if (y > 5 + 15 || x > 5 + 15) CHECK(om[y * 64 + x] == 1.0);
        }
    CHECK(om[5 * 64 + 5] > 1.0);
}

TEST_CASE("loss matches the pixel loop oracle") {
    const std::vector<double> g{0, 0, 1, 1, 0, 1, 1, 1, 0, 0, 1, 0, 0, 0, 0, 0};
    const std::vector<double> z{-1.0, 0.3, 2.0, 0.5, -2.2, 1.1, 0.0, 3.0, 0.7, -0.4, 1.6, -1.3, -0.2, 0.9, -3.0, 0.1};
    CHECK(ppa_loss(Tensor({1, 1, 4, 4}, z), Tensor({1, 1, 4, 4}, g), 3).item() ==
          doctest::Approx(loss_oracle(z, g, 4, 4, 3)).epsilon(1e-13));

    Rng data(4);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor gt = binary_map({2, 1, 12, 10}, data);
        const Tensor lg = random_tensor({2, 1, 12, 10}, data, -4, 4);
        double want = 0.0;
        for (int s = 0; s < 2; ++s) {
            std::vector<double> zs(lg.data().begin() + s * 120, lg.data().begin() + (s + 1) * 120);
            std::vector<double> gs(gt.data().begin() + s * 120, gt.data().begin() + (s + 1) * 120);
            want += loss_oracle(zs, gs, 12, 10, 5) / 2;
        }
        const double got = ppa_loss(lg, gt, 5).item();
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
        CHECK(got >= 0.0);
    }
}

TEST_CASE("loss rejects non-binary ground truth and mismatched shapes") {
    CHECK_THROWS_AS(ppa_loss(Tensor::zeros({1, 1, 4, 4}), Tensor::full({1, 1, 4, 4}, 0.5)), std::invalid_argument);
    CHECK_THROWS_AS(ppa_loss(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 4, 5})), ShapeError);
}

TEST_CASE("loss gradient passes the finite-difference check") {
    Rng data(5);
    for (int trial = 0; trial < 3; ++trial) {
        const Tensor lg = random_tensor({1, 1, 8, 8}, data, -3, 3, true);
        const Tensor gt = binary_map({1, 1, 8, 8}, data);
        const auto r = finite_diff_check([&] { return ppa_loss(lg, gt); }, {lg}, 1e-5, 1e-4);
        INFO("max rel err " << r.max_relative_error);
        CHECK(r.passed);
    }
}
