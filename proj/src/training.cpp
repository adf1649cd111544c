#include "hrt/training.hpp"

#include <cmath>
#include <numeric>

#include "hrt/ops.hpp"
#include "hrt/rng.hpp"

namespace hrt {

void apply_train_sections(const TextConfig& doc, TrainConfig& t, const ModelConfig& model) {
    t.steps = doc.get_int("train.steps", t.steps);
    t.batch = doc.get_int("train.batch", t.batch);
    t.lr = doc.get_double("train.lr", t.lr);
    t.weight_decay = doc.get_double("train.weight_decay", t.weight_decay);
    t.seed = static_cast<std::uint64_t>(doc.get_int("train.seed", static_cast<int>(t.seed)));
    t.n_train = doc.get_int("train.samples", t.n_train);
    t.zero_supplementary = doc.get_int("train.zero_supplementary", t.zero_supplementary ? 1 : 0) != 0;
    SyntheticSceneSpec& s = t.scene;
    s.image_h = model.input_h;
    s.image_w = model.input_w;
    s.modality = model.modality;
    s.n_objects = doc.get_int("data.objects", s.n_objects);
    s.noise_level = doc.get_double("data.noise_level", s.noise_level);
    s.supp_corruption = doc.get_double("data.supp_corruption", s.supp_corruption);
    s.primary_camouflage = doc.get_double("data.primary_camouflage", s.primary_camouflage);
    s.focal_slices = doc.get_int("data.focal_slices", s.focal_slices);
    s.validate();
    if (t.steps < 0) throw ConfigError("train.steps must be non-negative");
    if (t.batch <= 0) throw ConfigError("train.batch must be positive");
    if (t.n_train <= 0) throw ConfigError("train.samples must be positive");
    if (!(t.lr > 0) || !std::isfinite(t.lr)) throw ConfigError("train.lr must be positive");
    if (!(t.weight_decay >= 0)) throw ConfigError("train.weight_decay must be non-negative");
}

std::vector<SaliencySample> make_dataset(const SyntheticSceneSpec& scene, int n, std::uint64_t first_seed) {
    std::vector<SaliencySample> out;
    for (int i = 0; i < n; ++i) {
        SyntheticSceneSpec s = scene;
        s.seed = first_seed + static_cast<std::uint64_t>(i);
        out.push_back(generate(s));
    }
    return out;
}

SupplementaryInput zeros_like(const SupplementaryInput& s) {
    return {s.kind, Tensor::zeros(s.data.shape())};
}

void train(Model& model, const std::vector<SaliencySample>& data, const TrainConfig& config,
           const std::function<void(int, double)>& on_step) {
    AdamW opt;
    opt.lr = config.lr;
    opt.weight_decay = config.weight_decay;
    Rng rng(config.seed ^ 0xB47C4ULL);
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config.batch), data.size());
    for (int step = 0; step < config.steps; ++step) {
        std::vector<SaliencySample> picked;
        while (picked.size() < batch) {
            if (cursor == order.size()) {
                for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
                cursor = 0;
            }
            picked.push_back(data[static_cast<std::size_t>(order[cursor++])]);
        }
        const SaliencySample b = stack(picked);
        const SupplementaryInput supp = config.zero_supplementary ? zeros_like(b.supp) : b.supp;
        model.params().zero_grad();
        const Tensor loss = ppa_loss(model.forward(b.image, supp).logits, b.gt);
        const double l = loss.item();
        if (!std::isfinite(l)) throw NonFiniteError("train: loss is not finite at step " + std::to_string(step));
        loss.backward();
        opt.step(model.params());
        ++model.step;
        if (on_step) on_step(step, l);
    }
}

metrics::Map to_map(const Tensor& t) {
    const int h = static_cast<int>(t.dim(-2)), w = static_cast<int>(t.dim(-1));
    if (static_cast<std::size_t>(h) * w != t.numel()) throw ShapeError("to_map: expected a single-channel single map");
    return {h, w, std::vector<double>(t.data().begin(), t.data().end())};
}

std::vector<metrics::Map> predict(const Model& model, const std::vector<SaliencySample>& data, bool zero_supplementary) {
    NoGradGuard no_grad;
    std::vector<metrics::Map> out;
    constexpr std::size_t kChunk = 8;
    for (std::size_t i = 0; i < data.size(); i += kChunk) {
        std::vector<SaliencySample> part(data.begin() + static_cast<std::ptrdiff_t>(i),
                                         data.begin() + static_cast<std::ptrdiff_t>(std::min(data.size(), i + kChunk)));
        const SaliencySample b = stack(part);
        const Tensor prob = model.forward(b.image, zero_supplementary ? zeros_like(b.supp) : b.supp).prob;
        for (std::size_t k = 0; k < part.size(); ++k)
            out.push_back(to_map(ops::slice(prob, 0, static_cast<std::int64_t>(k), 1)));
    }
    return out;
}

metrics::EvalResult evaluate_model(const Model& model, const std::vector<SaliencySample>& data, bool zero_supplementary) {
    const auto preds = predict(model, data, zero_supplementary);
    std::vector<metrics::EvalResult> rs;
    for (std::size_t i = 0; i < data.size(); ++i) rs.push_back(metrics::evaluate(preds[i], to_map(data[i].gt)));
    return metrics::mean_of(rs);
}

}  // namespace hrt
