#include "hrt/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace hrt {

namespace {

template <class F>
auto in_stage(const char* stage, F&& fn) {
    try {
        return fn();
    } catch (const ShapeError& e) {
        throw ShapeError(std::string(stage) + ": " + e.what());
    } catch (const NonFiniteError& e) {
        throw NonFiniteError(std::string(stage) + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(stage) + ": " + e.what());
    }
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config.validate();
    Rng rng(seed);
    nn::Builder root(params_, rng);
    aux = AuxStream(root.sub("aux"), config);
    for (int i = 0; i < 4; ++i) smim[i] = Smim(root.sub("smim" + std::to_string(i + 1)), config.branch_channels[i]);
    backbone = Backbone(root.sub("backbone"), config);
    fusion = Fusion(root.sub("fusion"), config);
    head = Head(root.sub("head"), config.token_dim);
}

SaliencyMap Model::forward(const Tensor& image, const SupplementaryInput& supp, ForwardTrace* trace) const {
    if (image.rank() != 4 || image.dim(1) != 3 || image.dim(2) != config_.input_h || image.dim(3) != config_.input_w) {
        throw ShapeError("forward: primary image must be (B,3," + std::to_string(config_.input_h) + "," +
                         std::to_string(config_.input_w) + "), got " + shape_str(image.shape()));
    }
    const MultiResFeatures f_s = in_stage("aux stream", [&] { return aux(supp); });
    if (f_s[0].dim(0) != image.dim(0)) throw ShapeError("forward: primary and supplementary batch sizes differ");
    MultiResFeatures f_r, f_rs;
    const Injector inject = [&](int level, const Tensor& fr) {
        Tensor out = in_stage("smim", [&] {
            const Smim& m = smim[level];
            if (use_supplementary_path) return m(fr, f_s[level]);
            return ops::mul_per_sample(fr, m.modality_weights(fr, f_s[level]).w_r);
        });
        f_rs[level] = out;
        return out;
    };
    const MultiResFeatures f_o = in_stage("backbone", [&] { return backbone.forward(image, inject, &f_r); });
    FusionState st = in_stage("fusion", [&] { return fusion(f_o); });
    SaliencyMap out = in_stage("head", [&] { return head(st.decoded_map(0)); });
    if (trace) *trace = {f_s, f_r, f_rs, f_o, std::move(st)};
    return out;
}

ParamFlops count_params_flops(const Model& model) {
    const ModelConfig& c = model.config();
    const Tensor image = Tensor::zeros({1, 3, c.input_h, c.input_w});
    const SupplementaryInput supp{c.modality, Tensor::zeros({1, c.supplementary_channels(), c.input_h, c.input_w})};
    NoGradGuard no_grad;
    FlopCounter counter;
    model.forward(image, supp);
    return {model.params().count(), counter.total()};
}

void AdamW::step(nn::ParamStore& params) {
    auto& entries = params.entries();
    if (m_.empty()) {
        for (const auto& e : entries) {
            m_.emplace_back(e.second.numel(), 0.0);
            v_.emplace_back(e.second.numel(), 0.0);
        }
    }
    if (m_.size() != entries.size()) throw std::logic_error("AdamW: parameter set changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Tensor& p = entries[i].second;
        if (!p.has_grad()) continue;
        auto d = p.mutable_data();
        const auto g = p.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < d.size(); ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            d[j] -= lr * weight_decay * d[j];
            d[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
        }
    }
}

namespace {

constexpr char kMagic[4] = {'H', 'R', 'T', 'K'};
constexpr std::uint8_t kTagF64 = 1;

void put_u(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    std::uint64_t u(int bytes) {
        need(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint: file is truncated");
    }
    std::string data_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::string out(kMagic, 4);
    put_u(out, kCheckpointVersion, 4);
    const std::string cfg = model.config().canonical_text();
    put_u(out, cfg.size(), 4);
    out += cfg;
    put_u(out, static_cast<std::uint64_t>(model.step), 8);
    const auto& entries = model.params().entries();
    put_u(out, entries.size(), 4);
    for (const auto& [name, t] : entries) {
        put_u(out, name.size(), 4);
        out += name;
        out.push_back(static_cast<char>(kTagF64));
        put_u(out, t.shape().size(), 4);
        for (auto e : t.shape()) put_u(out, static_cast<std::uint64_t>(e), 8);
        for (double v : t.data()) put_u(out, std::bit_cast<std::uint64_t>(v), 8);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "checkpoint: cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "checkpoint: write failed for " + path);
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "checkpoint: cannot read " + path);
    Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
    using K = CheckpointError::Kind;
    const std::size_t head = std::min<std::size_t>(4, r.remaining());
    const std::string magic = r.bytes(head);
    if (magic != std::string(kMagic, head)) {
        throw CheckpointError(K::format, "checkpoint: " + path + " is not a checkpoint (bad magic)");
    }
    if (head < 4) throw CheckpointError(K::truncated, "checkpoint: file is truncated");
    const auto version = r.u(4);
    if (version != kCheckpointVersion) {
        throw CheckpointError(K::version, "checkpoint: format version " + std::to_string(version) + ", expected " +
                                              std::to_string(kCheckpointVersion));
    }
    ModelState st;
    const std::string cfg = r.bytes(r.u(4));
    try {
        st.config = ModelConfig::from_canonical_text(cfg);
    } catch (const ConfigError& e) {
        throw CheckpointError(K::format, std::string("checkpoint: bad config block: ") + e.what());
    }
    st.step = static_cast<std::int64_t>(r.u(8));
    const auto count = r.u(4);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u(4));
        const auto tag = r.u(1);
        if (tag != kTagF64) throw CheckpointError(K::format, "checkpoint: unknown dtype tag for " + name);
        const auto rank = r.u(4);
        if (rank > 8) throw CheckpointError(K::format, "checkpoint: implausible rank for " + name);
        Shape shape;
        std::uint64_t n = 1;
        for (std::uint64_t a = 0; a < rank; ++a) {
            const auto e = r.u(8);
            if (e == 0 || e > (1u << 30)) throw CheckpointError(K::format, "checkpoint: bad extent for " + name);
            shape.push_back(static_cast<std::int64_t>(e));
            n *= e;
        }
        if (n * 8 > r.remaining()) throw CheckpointError(K::truncated, "checkpoint: file is truncated");
        std::vector<double> data(n);
        for (auto& v : data) v = std::bit_cast<double>(r.u(8));
        st.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    if (!r.done()) throw CheckpointError(K::format, "checkpoint: trailing bytes after last tensor");
    return st;
}

void apply_state(Model& model, const ModelState& state) {
    using K = CheckpointError::Kind;
    if (!(state.config == model.config())) {
        throw CheckpointError(K::key_mismatch, "checkpoint: config differs from the model's config");
    }
    auto& entries = model.params().entries();
    if (entries.size() != state.tensors.size()) {
        throw CheckpointError(K::key_mismatch, "checkpoint: parameter count differs");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].first != state.tensors[i].first || entries[i].second.shape() != state.tensors[i].second.shape()) {
            throw CheckpointError(K::key_mismatch, "checkpoint: parameter " + state.tensors[i].first +
                                                       " does not match model parameter " + entries[i].first);
        }
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto d = entries[i].second.mutable_data();
        const auto s = state.tensors[i].second.data();
        std::copy(s.begin(), s.end(), d.begin());
    }
    model.step = state.step;
}

}  // namespace hrt
