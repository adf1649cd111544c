#include <cmath>

#include "doctest.h"
#include "hrt/aux_stream.hpp"
#include "hrt/gradcheck.hpp"
#include "hrt/smim.hpp"
#include "test_util.hpp"

using namespace hrt;
using hrt::testing::max_abs_diff;
using hrt::testing::probe;
using hrt::testing::random_tensor;
using hrt::testing::set_all;
using hrt::testing::set_values;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Smim make_smim(nn::ParamStore& ps, int channels, std::uint64_t seed) {
    Rng rng(seed);
    return Smim(nn::Builder(ps, rng), channels);
}

// 1-channel SMIM with every weight set by hand. The 3x3 conv on a 1x1 map
// only sees its centre tap.
struct HandSmim {
    nn::ParamStore ps;
    Smim m = make_smim(ps, 1, 1);
    double k_rr = 0.7, k_rs = -0.4, c_r = 0.1;  // channel 0 (w_r)
    double k_sr = 0.3, k_ss = 0.9, c_s = -0.2;  // channel 1 (w_s)
    double red = 1.3, red_b = -0.1, gh = 0.8, gh_b = 0.05, gw = -0.6, gw_b = 0.2;

    HandSmim() {
        std::vector<double> k(2 * 2 * 9, 0.0);
        k[0 * 18 + 0 * 9 + 4] = k_rr;
        k[0 * 18 + 1 * 9 + 4] = k_rs;
        k[1 * 18 + 0 * 9 + 4] = k_sr;
        k[1 * 18 + 1 * 9 + 4] = k_ss;
        set_values(m.weight_conv.weight, k);
        set_values(m.weight_conv.bias, {c_r, c_s});
        set_values(m.coa_reduce.weight, {red});
        set_values(m.coa_reduce.bias, {red_b});
        set_values(m.coa_h.weight, {gh});
        set_values(m.coa_h.bias, {gh_b});
        set_values(m.coa_w.weight, {gw});
        set_values(m.coa_w.bias, {gw_b});
    }
    double w_r(double a, double b) const { return sig(k_rr * a + k_rs * b + c_r); }
    double w_s(double a, double b) const { return sig(k_sr * a + k_ss * b + c_s); }
    double coa(double f) const {
        const double u = gelu(red * f + red_b);
        return f * sig(gh * u + gh_b) * sig(gw * u + gw_b);
    }
};

}  // namespace

TEST_CASE("aux stream maps match backbone strides and channels") {
    const ModelConfig c;
    nn::ParamStore ps;
    Rng rng(1);
    AuxStream aux(nn::Builder(ps, rng), c);
    NoGradGuard ng;
    Rng data(2);
    const auto f = aux(SupplementaryInput::single(Modality::depth, random_tensor({1, 1, 224, 224}, data)));
    const int sizes[] = {56, 28, 14, 7};
    for (int i = 0; i < 4; ++i) CHECK(f[i].shape() == Shape{1, c.branch_channels[i], sizes[i], sizes[i]});

    for (auto cfg : {ModelConfig::toy(), [] {
             ModelConfig t = ModelConfig::toy();
             t.branch_channels = {4, 8, 12, 20};
             t.input_w = 96;
             t.modality = Modality::thermal;
             return t;
         }()}) {
        nn::ParamStore ps2;
        AuxStream a2(nn::Builder(ps2, rng), cfg);
        const auto g = a2(SupplementaryInput::single(cfg.modality, random_tensor({2, 1, cfg.input_h, cfg.input_w}, data)));
        check_features(g, cfg, 2, "aux");
    }
}

TEST_CASE("focal stacks are zero padded to twelve slices") {
    Rng data(3);
    std::vector<Tensor> slices;
    for (int i = 0; i < 5; ++i) slices.push_back(random_tensor({1, 3, 8, 8}, data));
    const auto s = SupplementaryInput::focal(slices);
    CHECK(s.data.shape() == Shape{1, 36, 8, 8});
    for (int ch = 0; ch < 36; ++ch) {
        for (int p = 0; p < 64; ++p) {
            const double v = s.data.at(static_cast<std::size_t>(ch * 64 + p));
            if (ch < 15) {
                CHECK(v == slices[ch / 3].at(static_cast<std::size_t>((ch % 3) * 64 + p)));
            } else {
                CHECK(v == 0.0);
            }
        }
    }
    std::vector<Tensor> many(13, random_tensor({1, 3, 8, 8}, data));
    CHECK_THROWS_AS(SupplementaryInput::focal(many), ConfigError);
    CHECK_NOTHROW(SupplementaryInput::focal(std::vector<Tensor>(12, many[0])));
}

TEST_CASE("aux stream rejects inputs that break the supplementary contract") {
    ModelConfig c = ModelConfig::toy();
    nn::ParamStore ps;
    Rng rng(4);
    AuxStream aux(nn::Builder(ps, rng), c);
    CHECK_THROWS_AS(aux(SupplementaryInput::single(Modality::depth, Tensor::zeros({1, 1, 64, 32}))), ShapeError);
    CHECK_THROWS_AS(aux(SupplementaryInput{Modality::depth, Tensor::zeros({1, 2, 64, 64})}), ShapeError);
    CHECK_THROWS_AS(aux(SupplementaryInput::single(Modality::thermal, Tensor::zeros({1, 1, 64, 64}))), ConfigError);
}

TEST_CASE("zero supplementary input gives all-zero features at initialisation") {
    for (auto mod : {Modality::depth, Modality::focal_stack}) {
        ModelConfig c = ModelConfig::toy();
        c.modality = mod;
        nn::ParamStore ps;
        Rng rng(5);
        AuxStream aux(nn::Builder(ps, rng), c);
        const auto f = aux({mod, Tensor::zeros({2, c.supplementary_channels(), 64, 64})});
        double total = 0.0;
        for (int i = 0; i < 4; ++i)
            for (double v : f[i].data()) total += std::abs(v);
        CHECK(total == 0.0);
    }
}

TEST_CASE("zero padding slices leaves the first pre-activation equal to a narrower conv") {
    ModelConfig c = ModelConfig::toy();
    c.modality = Modality::focal_stack;
    nn::ParamStore ps;
    Rng rng(6);
    AuxStream aux(nn::Builder(ps, rng), c);
    Rng data(7);
    std::vector<Tensor> slices;
    for (int i = 0; i < 4; ++i) slices.push_back(random_tensor({1, 3, 64, 64}, data));
    const auto s = SupplementaryInput::focal(slices);
    const Tensor& w = aux.stem[0].conv.weight;  // (16, 36, 3, 3)
    const Tensor narrow = ops::slice(w, 1, 0, 12);
    const Tensor a = aux.stem[0].conv(s.data);
    const Tensor b = ops::conv2d(ops::concat(slices, 1), narrow, Tensor(), 2, 1);
    CHECK(max_abs_diff(a.data(), b.data()) <= 1e-12);
}

TEST_CASE("zero-initialised weight conv gives both modality weights one half") {
    nn::ParamStore ps;
    Smim m = make_smim(ps, 8, 8);
    set_all(m.weight_conv.weight, 0.0);
    set_all(m.weight_conv.bias, 0.0);
    Rng data(9);
    const auto w = m.modality_weights(random_tensor({3, 8, 5, 5}, data), random_tensor({3, 8, 5, 5}, data));
    for (double v : w.w_r.data()) CHECK(v == 0.5);
    for (double v : w.w_s.data()) CHECK(v == 0.5);
    CHECK(w.w_r.shape() == Shape{3, 1});
}

TEST_CASE("modality weights on a single pixel match hand arithmetic") {
    HandSmim h;
    for (auto [a, b] : {std::pair{0.5, -1.0}, std::pair{2.0, 3.0}, std::pair{-0.3, 0.0}}) {
        const auto w = h.m.modality_weights(Tensor({1, 1, 1, 1}, {a}), Tensor({1, 1, 1, 1}, {b}));
        CHECK(w.w_r.item() == doctest::Approx(h.w_r(a, b)).epsilon(1e-14));
        CHECK(w.w_s.item() == doctest::Approx(h.w_s(a, b)).epsilon(1e-14));
    }
}

TEST_CASE("modality weights stay strictly inside the unit interval") {
    nn::ParamStore ps;
    Smim m = make_smim(ps, 4, 10);
    Rng data(11);
    for (int i = 0; i < 1000; ++i) {
        const double scale = i % 2 ? 1.0 : 50.0;
        const auto w = m.modality_weights(random_tensor({1, 4, 3, 3}, data, -scale, scale),
                                          random_tensor({1, 4, 3, 3}, data, -scale, scale));
        CHECK(w.w_r.item() > 0.0);
        CHECK(w.w_r.item() < 1.0);
        CHECK(w.w_s.item() > 0.0);
        CHECK(w.w_s.item() < 1.0);
    }
    CHECK_THROWS_AS(m.modality_weights(Tensor::zeros({1, 4, 3, 3}), Tensor::zeros({1, 4, 3, 2})), ShapeError);
}

TEST_CASE("coordinate attention contract") {
    nn::ParamStore ps;
    Smim m = make_smim(ps, 16, 12);
    CHECK(m.hidden() == 2);
    const Tensor z = m.coordinate_attention(Tensor::zeros({2, 16, 8, 4}));
    CHECK(z.shape() == Shape{2, 16, 8, 4});
    for (double v : z.data()) CHECK(v == 0.0);
    Rng data(13);
    CHECK(m.coordinate_attention(random_tensor({2, 16, 8, 4}, data)).shape() == Shape{2, 16, 8, 4});
    nn::ParamStore ps2;
    CHECK(make_smim(ps2, 4, 1).hidden() == 1);

    HandSmim h;
    for (double f : {0.8, -1.7, 0.0}) {
        CHECK(h.m.coordinate_attention(Tensor({1, 1, 1, 1}, {f})).item() == doctest::Approx(h.coa(f)).epsilon(1e-14));
    }
}

TEST_CASE("inject composes the weights and the gated supplementary branch") {
    HandSmim h;
    for (auto [a, b] : {std::pair{0.5, -1.0}, std::pair{1.5, 2.0}}) {
        const double want = h.w_r(a, b) * a + h.coa(h.w_s(a, b) * b);
        CHECK(h.m(Tensor({1, 1, 1, 1}, {a}), Tensor({1, 1, 1, 1}, {b})).item() == doctest::Approx(want).epsilon(1e-14));
    }

    nn::ParamStore ps;
    Smim m = make_smim(ps, 32, 14);
    Rng data(15);
    const Tensor fr = random_tensor({2, 32, 56, 56}, data);
    const Tensor fs = Tensor::zeros({2, 32, 56, 56});
    const Tensor out = m(fr, fs);
    CHECK(out.shape() == fr.shape());
    const auto w = m.modality_weights(fr, fs);
    CHECK(max_abs_diff(out.data(), ops::mul_per_sample(fr, w.w_r).data()) == 0.0);
}

TEST_CASE("with zero supplementary features the output ignores coordinate attention parameters") {
    nn::ParamStore ps;
    Smim m = make_smim(ps, 8, 16);
    Rng data(17);
    const Tensor fr = random_tensor({2, 8, 4, 4}, data);
    const Tensor fs = Tensor::zeros({2, 8, 4, 4});
    const Tensor before = m(fr, fs);
    for (auto* conv : {&m.coa_reduce, &m.coa_h, &m.coa_w}) {
        for (auto& v : conv->weight.mutable_data()) v += data.uniform(-3, 3);
        for (auto& v : conv->bias.mutable_data()) v += data.uniform(-3, 3);
    }
    CHECK(max_abs_diff(before.data(), m(fr, fs).data()) == 0.0);
}

TEST_CASE("inject passes the finite-difference check") {
    nn::ParamStore ps;
    Smim m = make_smim(ps, 8, 18);
    Rng data(19);
    const Tensor fr = random_tensor({1, 8, 4, 4}, data, -1, 1, true);
    const Tensor fs = random_tensor({1, 8, 4, 4}, data, -1, 1, true);
    std::vector<Tensor> leaves{fr, fs};
    for (const auto& e : ps.entries()) leaves.push_back(e.second);
    const auto r = finite_diff_check([&] { return probe(m(fr, fs)); }, leaves, 1e-5, 1e-4);
    INFO("max rel err " << r.max_relative_error);
    CHECK(r.passed);
}
