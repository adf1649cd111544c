#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hrt/ops.hpp"
#include "hrt/rng.hpp"
#include "hrt/tensor.hpp"

namespace hrt::nn {

// Ordered registry of trainable tensors keyed by hierarchical dotted names.
// Registration order is the construction order, which is fixed by the config.
class ParamStore {
public:
    // Throws std::logic_error on a duplicate name.
    Tensor add(const std::string& name, Tensor value);

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    Tensor get(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::int64_t count() const;
    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

// Hands out parameters under a name prefix.
class Builder {
public:
    Builder(ParamStore& store, Rng& rng, std::string prefix = "")
        : store_(&store), rng_(&rng), prefix_(std::move(prefix)) {}

    Builder sub(const std::string& name) const;

    // U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Tensor uniform(const std::string& name, const Shape& shape, std::int64_t fan_in);
    Tensor constant(const std::string& name, const Shape& shape, double value);

    Rng& rng() { return *rng_; }

private:
    ParamStore* store_;
    Rng* rng_;
    std::string prefix_;
};

// Largest g in {8,4,2,1} dividing c with at least two channels per group.
int group_count(int channels);

struct Conv2d {
    Tensor weight;
    Tensor bias;  // may be undefined
    int stride = 1;
    int padding = 0;

    Conv2d() = default;
    Conv2d(Builder b, int cin, int cout, int kernel, int stride, int padding, bool with_bias = true);
    Tensor operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, padding); }
};

struct Linear {
    Tensor weight;
    Tensor bias;

    Linear() = default;
    Linear(Builder b, int din, int dout);
    Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    LayerNorm() = default;
    LayerNorm(Builder b, int dim);
    Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }
};

struct GroupNorm {
    int groups = 1;
    Tensor gamma;
    Tensor beta;

    GroupNorm() = default;
    GroupNorm(Builder b, int channels);
    Tensor operator()(const Tensor& x) const { return ops::group_norm(x, groups, gamma, beta); }
};

// conv -> group norm -> optional GELU
struct ConvNormAct {
    Conv2d conv;
    GroupNorm norm;
    bool act = true;

    ConvNormAct() = default;
    ConvNormAct(Builder b, int cin, int cout, int kernel, int stride, int padding, bool act = true);
    Tensor operator()(const Tensor& x) const;
};

// Overwrites a parameter's values in place (tests, checkpoint loading).
void fill(Tensor& t, double value);

}  // namespace hrt::nn
