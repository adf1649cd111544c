#include "hrt/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hrt::nn {

Tensor ParamStore::add(const std::string& name, Tensor value) {
    if (contains(name)) throw std::logic_error("ParamStore: duplicate parameter " + name);
    value.set_requires_grad(true);
    entries_.emplace_back(name, value);
    return value;
}

Tensor ParamStore::get(const std::string& name) const {
    for (const auto& [n, t] : entries_) {
        if (n == name) return t;
    }
    throw std::out_of_range("ParamStore: no parameter " + name);
}

bool ParamStore::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::int64_t ParamStore::count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::int64_t>(e.second.numel());
    return n;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
}

Builder Builder::sub(const std::string& name) const {
    return Builder(*store_, *rng_, prefix_.empty() ? name : prefix_ + "." + name);
}

Tensor Builder::uniform(const std::string& name, const Shape& shape, std::int64_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& x : v) x = rng_->uniform(-bound, bound);
    return store_->add(sub(name).prefix_, Tensor(shape, std::move(v)));
}

Tensor Builder::constant(const std::string& name, const Shape& shape, double value) {
    return store_->add(sub(name).prefix_, Tensor::full(shape, value));
}

int group_count(int channels) {
    for (int g : {8, 4, 2}) {
        if (channels % g == 0 && channels / g >= 2) return g;
    }
    return 1;
}

Conv2d::Conv2d(Builder b, int cin, int cout, int kernel, int stride_, int padding_, bool with_bias)
    : stride(stride_), padding(padding_) {
    const std::int64_t fan_in = static_cast<std::int64_t>(cin) * kernel * kernel;
    weight = b.uniform("weight", {cout, cin, kernel, kernel}, fan_in);
    if (with_bias) bias = b.uniform("bias", {cout}, fan_in);
}

Linear::Linear(Builder b, int din, int dout) {
    weight = b.uniform("weight", {dout, din}, din);
    bias = b.uniform("bias", {dout}, din);
}

LayerNorm::LayerNorm(Builder b, int dim) {
    gamma = b.constant("gamma", {dim}, 1.0);
    beta = b.constant("beta", {dim}, 0.0);
}

GroupNorm::GroupNorm(Builder b, int channels) : groups(group_count(channels)) {
    gamma = b.constant("gamma", {channels}, 1.0);
    beta = b.constant("beta", {channels}, 0.0);
}

ConvNormAct::ConvNormAct(Builder b, int cin, int cout, int kernel, int stride, int padding, bool act_)
    : conv(b.sub("conv"), cin, cout, kernel, stride, padding, false), norm(b.sub("norm"), cout), act(act_) {}

Tensor ConvNormAct::operator()(const Tensor& x) const {
    Tensor y = norm(conv(x));
    return act ? ops::gelu(y) : y;
}

void fill(Tensor& t, double value) {
    auto d = t.mutable_data();
    std::fill(d.begin(), d.end(), value);
}

}  // namespace hrt::nn
