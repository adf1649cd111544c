#include <cmath>
#include <functional>
#include <string>

#include "doctest.h"
#include "hrt/gradcheck.hpp"
#include "hrt/ops.hpp"
#include "op_gradchecks.hpp"
#include "test_util.hpp"

using namespace hrt;
using hrt::testing::max_abs_diff;
using hrt::testing::probe;
using hrt::testing::random_tensor;

namespace {

// Direct six-loop cross-correlation.
std::vector<double> naive_conv(const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad) {
    const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto O = k.dim(0), KH = k.dim(2), KW = k.dim(3);
    const auto HO = (H + 2 * pad - KH) / stride + 1, WO = (W + 2 * pad - KW) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(B * O * HO * WO));
    for (std::int64_t n = 0; n < B; ++n)
        for (std::int64_t o = 0; o < O; ++o)
            for (std::int64_t y = 0; y < HO; ++y)
                for (std::int64_t xo = 0; xo < WO; ++xo) {
                    double acc = b.defined() ? b.at(o) : 0.0;
                    for (std::int64_t c = 0; c < C; ++c)
                        for (std::int64_t i = 0; i < KH; ++i)
                            for (std::int64_t j = 0; j < KW; ++j) {
                                const auto iy = y * stride - pad + i, ix = xo * stride - pad + j;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.at(((n * C + c) * H + iy) * W + ix) * k.at(((o * C + c) * KH + i) * KW + j);
                            }
                    out[((n * O + o) * HO + y) * WO + xo] = acc;
                }
    return out;
}

double bilinear_oracle(const std::vector<double>& img, int h, int w, int oh, int ow, int oy, int ox) {
    auto src = [](int dst, int in, int out) {
        double s = (dst + 0.5) * static_cast<double>(in) / out - 0.5;
        return s < 0 ? 0.0 : s;
    };
    const double sy = src(oy, h, oh), sx = src(ox, w, ow);
    const int y0 = std::min(static_cast<int>(sy), h - 1), x0 = std::min(static_cast<int>(sx), w - 1);
    const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double ly = sy - y0, lx = sx - x0;
    auto at = [&](int y, int x) { return img[static_cast<std::size_t>(y * w + x)]; };
    return at(y0, x0) * (1 - ly) * (1 - lx) + at(y0, x1) * (1 - ly) * lx + at(y1, x0) * ly * (1 - lx) +
           at(y1, x1) * ly * lx;
}

void expect_gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> leaves, const std::string& what) {
    const auto report = finite_diff_check(f, std::move(leaves), 1e-5, 1e-4);
    INFO(what << " max rel err " << report.max_relative_error);
    CHECK(report.passed);
}

}  // namespace

TEST_CASE("conv2d examples") {
    SUBCASE("zero input gives per-channel bias") {
        Rng rng(1);
        auto x = Tensor::zeros({2, 3, 5, 4});
        auto k = random_tensor({4, 3, 3, 3}, rng);
        Tensor b({4}, {0.5, -1.0, 2.0, 0.25});
        auto y = ops::conv2d(x, k, b, 1, 1);
        REQUIRE(y.shape() == Shape{2, 4, 5, 4});
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t c = 0; c < 4; ++c)
                for (std::int64_t i = 0; i < 20; ++i) CHECK(y.at((n * 4 + c) * 20 + i) == b.at(c));
    }
    SUBCASE("scalar kernel doubles every entry") {
        Tensor x({1, 1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        auto y = ops::conv2d(x, Tensor({1, 1, 1, 1}, {2.0}), Tensor({1}, {0.0}), 1, 0);
        for (std::size_t i = 0; i < 9; ++i) CHECK(y.at(i) == 2.0 * x.at(i));
    }
    SUBCASE("strided padded conv matches direct oracle") {
        Rng rng(7);
        auto x = random_tensor({1, 2, 5, 5}, rng);
        auto k = random_tensor({3, 2, 3, 3}, rng);
        auto b = random_tensor({3}, rng);
        auto y = ops::conv2d(x, k, b, 2, 1);
        REQUIRE(y.shape() == Shape{1, 3, 3, 3});
        CHECK(max_abs_diff(y.data(), naive_conv(x, k, b, 2, 1)) < 1e-12);
    }
    SUBCASE("channel mismatch is a precondition error") {
        CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor(), 1, 1),
                        ShapeError);
    }
    SUBCASE("kernel larger than padded input") {
        CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), Tensor(), 1, 1),
                        ShapeError);
    }
}

TEST_CASE("conv2d equals the direct-sum oracle across random geometries") {
    Rng rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        const int cin = 1 + static_cast<int>(rng.below(4)), cout = 1 + static_cast<int>(rng.below(4));
        const int kh = 1 + static_cast<int>(rng.below(3)), kw = 1 + static_cast<int>(rng.below(3));
        const int stride = 1 + static_cast<int>(rng.below(2)), pad = static_cast<int>(rng.below(2));
        const int h = kh + static_cast<int>(rng.below(6)), w = kw + static_cast<int>(rng.below(6));
        auto x = random_tensor({2, cin, h, w}, rng);
        auto k = random_tensor({cout, cin, kh, kw}, rng);
        auto b = random_tensor({cout}, rng);
        auto y = ops::conv2d(x, k, b, stride, pad);
        CHECK(max_abs_diff(y.data(), naive_conv(x, k, b, stride, pad)) < 1e-10);
    }
}

TEST_CASE("softmax examples") {
    CHECK(ops::softmax(Tensor({1, 1}, {3.7}), 1).item() == 1.0);
    auto u = ops::softmax(Tensor({3}, {0, 0, 0}), 0);
    for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    auto big = ops::softmax(Tensor({2}, {1000, 1001}), 0);
    CHECK(std::abs(big.at(0) - 0.26894142136999512075) < 1e-15);
    CHECK(std::abs(big.at(1) - 0.73105857863000487925) < 1e-15);
}

TEST_CASE("softmax sums to one for large magnitudes") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto len = static_cast<std::int64_t>(1 + rng.below(9));
        auto x = random_tensor({3, len, 4}, rng, -1e4, 1e4);
        auto y = ops::softmax(x, 1);
        for (std::int64_t o = 0; o < 3; ++o)
            for (std::int64_t i = 0; i < 4; ++i) {
                double s = 0.0;
                for (std::int64_t l = 0; l < len; ++l) {
                    const double v = y.at((o * len + l) * 4 + i);
                    CHECK(v >= 0.0);
                    s += v;
                }
                CHECK(std::abs(s - 1.0) <= 1e-9);
            }
    }
}

TEST_CASE("global_avg_pool examples") {
    CHECK(ops::global_avg_pool(Tensor::full({1, 1, 3, 5}, 2.5)).item() == 2.5);
    CHECK(ops::global_avg_pool(Tensor({1, 1, 2, 2}, {0, 1, 1, 0})).item() == 0.5);
    Rng rng(3);
    auto x = random_tensor({2, 3, 7, 7}, rng);
    auto y = ops::global_avg_pool(x);
    REQUIRE(y.shape() == Shape{2, 3});
    for (std::size_t bc = 0; bc < 6; ++bc) {
        double s = 0.0;
        for (std::size_t j = 0; j < 49; ++j) s += x.at(bc * 49 + j);
        CHECK(std::abs(y.at(bc) - s / 49.0) < 1e-12);
    }
}

TEST_CASE("bilinear_resize examples") {
    auto c = ops::bilinear_resize(Tensor::full({1, 2, 3, 5}, -0.75), 7, 2);
    for (double v : c.data()) CHECK(v == doctest::Approx(-0.75).epsilon(1e-15));

    Rng rng(9);
    auto x = random_tensor({2, 3, 4, 6}, rng);
    auto same = ops::bilinear_resize(x, 4, 6);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same.at(i) == x.at(i));

    std::vector<double> img{0.0, 1.0, 2.0, -3.0};
    auto up = ops::bilinear_resize(Tensor({1, 1, 2, 2}, img), 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int xo = 0; xo < 4; ++xo)
            CHECK(std::abs(up.at(static_cast<std::size_t>(y * 4 + xo)) - bilinear_oracle(img, 2, 2, 4, 4, y, xo)) <
                  1e-14);
    CHECK_THROWS_AS(ops::bilinear_resize(x, 0, 3), ShapeError);
}

TEST_CASE("backward examples") {
    Rng rng(2);
    SUBCASE("sum gives ones") {
        auto x = random_tensor({2, 3, 4}, rng, -1, 1, true);
        ops::sum(x).backward();
        for (double g : x.grad()) CHECK(g == 1.0);
    }
    SUBCASE("half squared norm gives x") {
        auto x = random_tensor({5, 2}, rng, -1, 1, true);
        ops::scale(ops::sum(ops::mul(x, x)), 0.5).backward();
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(x.at(i)).epsilon(1e-15));
    }
    SUBCASE("conv -> sigmoid -> mean matches finite differences") {
        auto x = random_tensor({2, 2, 5, 5}, rng, -1, 1, true);
        auto k = random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
        auto b = random_tensor({3}, rng, -1, 1, true);
        auto f = [&] { return ops::mean(ops::sigmoid(ops::conv2d(x, k, b, 2, 1))); };
        expect_gradcheck(f, {x, k, b}, "conv-sigmoid-mean");
    }
    SUBCASE("gradients accumulate until zeroed") {
        auto x = random_tensor({3}, rng, -1, 1, true);
        ops::sum(x).backward();
        ops::sum(ops::add(x, x)).backward();
        for (double g : x.grad()) CHECK(g == 3.0);
        x.zero_grad();
        for (double g : x.grad()) CHECK(g == 0.0);
    }
    SUBCASE("non-scalar loss is rejected") {
        auto x = random_tensor({3}, rng, -1, 1, true);
        CHECK_THROWS_AS(ops::scale(x, 2.0).backward(), AutogradError);
    }
    SUBCASE("second backward on a consumed graph is rejected") {
        auto x = random_tensor({3}, rng, -1, 1, true);
        auto h = ops::mul(x, x);
        auto loss = ops::sum(h);
        loss.backward();
        CHECK_THROWS_AS(loss.backward(), AutogradError);
        CHECK_THROWS_AS(ops::sum(ops::scale(h, 2.0)).backward(), AutogradError);
    }
    SUBCASE("no-grad guard records nothing") {
        auto x = random_tensor({3}, rng, -1, 1, true);
        NoGradGuard guard;
        CHECK_FALSE(ops::sum(x).requires_grad());
    }
}

TEST_CASE("finite_diff_check behaviour") {
    Rng rng(4);
    auto x = random_tensor({3, 4}, rng, -1, 1, true);
    SUBCASE("sum passes with ~zero error") {
        const auto r = finite_diff_check([&] { return ops::sum(x); }, {x}, 1e-5, 1e-4);
        CHECK(r.passed);
        CHECK(r.max_relative_error < 1e-8);
        CHECK_FALSE(r.failing_index.has_value());
    }
    SUBCASE("a wrong gradient rule is caught") {
        // Square with a backward rule that forgets the factor 2.
        auto bad_square = [](const Tensor& t) {
            std::vector<double> out(t.numel());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.at(i) * t.at(i);
            return make_result(t.shape(), std::move(out), {t}, [](detail::Node& self) {
                auto& g = self.parents[0]->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.parents[0]->data[i];
            });
        };
        const auto r = finite_diff_check([&] { return ops::sum(bad_square(x)); }, {x}, 1e-5, 1e-4);
        CHECK_FALSE(r.passed);
        CHECK(r.failing_index.has_value());
    }
    SUBCASE("non-deterministic function is an error") {
        int calls = 0;
        auto f = [&] { return ops::add_scalar(ops::sum(x), 1e-3 * ++calls); };
        CHECK_THROWS_AS(finite_diff_check(f, {x}, 1e-5, 1e-4), NonDeterministicError);
    }
    SUBCASE("eps must be positive") {
        CHECK_THROWS(finite_diff_check([&] { return ops::sum(x); }, {x}, 0.0, 1e-4));
    }
}

TEST_CASE("every differentiable op passes finite differences on random shapes") {
    int checked = 0;
    hrt::testing::run_op_gradchecks([&](const std::string& what, const GradCheckReport& r) {
        INFO(what << " max rel err " << r.max_relative_error);
        CHECK(r.passed);
        ++checked;
    });
    CHECK(checked == 5 * 32);
}

TEST_CASE("repeated forward passes are bit-identical") {
    Rng rng(21);
    auto x = random_tensor({2, 3, 6, 6}, rng);
    auto k = random_tensor({4, 3, 3, 3}, rng);
    auto run = [&] {
        auto y = ops::gelu(ops::conv2d(x, k, Tensor(), 2, 1));
        auto t = ops::to_tokens(y);
        return ops::efficient_attention(t, t, t, 2);
    };
    auto a = run(), b = run();
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("non-finite forward values are an error") {
    CHECK_THROWS_AS(ops::div(Tensor({1}, {1.0}), Tensor({1}, {0.0})), NonFiniteError);
}

TEST_CASE("tensor construction contract") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    CHECK_THROWS_AS(Tensor({0, 3}, {}), ShapeError);
    CHECK_THROWS_AS(ops::add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}
