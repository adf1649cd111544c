#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hrt/metrics.hpp"
#include "hrt/pipeline.hpp"
#include "hrt/synthetic.hpp"
#include "hrt/text_config.hpp"

namespace hrt {

struct TrainConfig {
    int steps = 800;
    int batch = 8;
    double lr = 5e-5;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    // Training set: n_train scenes generated from `scene` with consecutive seeds.
    int n_train = 8;
    SyntheticSceneSpec scene;
    // Replace the supplementary input by zeros (primary-only ablation).
    bool zero_supplementary = false;
};

// Reads the [train] and [data] sections; absent keys keep their defaults.
// The scene size follows the model's input size.
void apply_train_sections(const TextConfig& doc, TrainConfig& train, const ModelConfig& model);

// Scenes seeded first_seed, first_seed + 1, ...
std::vector<SaliencySample> make_dataset(const SyntheticSceneSpec& scene, int n, std::uint64_t first_seed);

SupplementaryInput zeros_like(const SupplementaryInput& s);

// Runs `config.steps` AdamW steps on the pixel-position-aware loss. Batches
// cycle through `data` in a fixed seeded order. `on_step` sees every loss.
// Throws NonFiniteError if the loss stops being finite.
void train(Model& model, const std::vector<SaliencySample>& data, const TrainConfig& config,
           const std::function<void(int step, double loss)>& on_step = {});

// Probability maps for every sample, in order, batched internally.
std::vector<metrics::Map> predict(const Model& model, const std::vector<SaliencySample>& data,
                                  bool zero_supplementary = false);

metrics::Map to_map(const Tensor& single);  // (1,1,H,W) or (H,W)-shaped data

// Mean metrics of the raw probability maps against the ground truths.
metrics::EvalResult evaluate_model(const Model& model, const std::vector<SaliencySample>& data,
                                   bool zero_supplementary = false);

}  // namespace hrt
