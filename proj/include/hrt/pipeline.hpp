#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hrt/aux_stream.hpp"
#include "hrt/backbone.hpp"
#include "hrt/config.hpp"
#include "hrt/fusion.hpp"
#include "hrt/head_loss.hpp"
#include "hrt/nn.hpp"
#include "hrt/smim.hpp"

namespace hrt {

// Intermediate features of one forward pass.
struct ForwardTrace {
    MultiResFeatures f_s;   // supplementary features
    MultiResFeatures f_r;   // primary feature entering each branch, pre-injection
    MultiResFeatures f_rs;  // SMIM outputs
    MultiResFeatures f_o;   // backbone outputs
    FusionState fusion;
};

// Full model: aux stream, four SMIMs, backbone, fusion, head. The parameter
// set (names, shapes, order) is a function of the config alone.
class Model {
public:
    Model(const ModelConfig& config, std::uint64_t seed);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    // image (B,3,H,W), supp per config modality. Errors are rethrown with the
    // failing stage prepended.
    SaliencyMap forward(const Tensor& image, const SupplementaryInput& supp, ForwardTrace* trace = nullptr) const;

    const ModelConfig& config() const { return config_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    std::int64_t step = 0;

    AuxStream aux;
    std::array<Smim, 4> smim;
    Backbone backbone;
    Fusion fusion;
    Head head;

    // When false, SMIM contributes only w_r * f_r (supplementary path ablated).
    bool use_supplementary_path = true;

private:
    ModelConfig config_;
    nn::ParamStore params_;
};

struct ParamFlops {
    std::int64_t params = 0;
    std::int64_t flops = 0;
};

// Parameter count and FLOPs (2 x multiply-adds of convs, linears and
// attention) of one batch-1 forward at the configured resolution.
ParamFlops count_params_flops(const Model& model);

// Decoupled weight decay Adam.
class AdamW {
public:
    double lr = 5e-5;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void step(nn::ParamStore& params);
    std::int64_t steps_taken() const { return t_; }

private:
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
};

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { io, format, version, truncated, key_mismatch };
    CheckpointError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ModelState {
    ModelConfig config;
    std::int64_t step = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const Model& model, const std::string& path);
// Parses the whole file; nothing is returned unless it is complete and valid.
ModelState load_checkpoint(const std::string& path);
// Copies a loaded state into `model`. Throws key_mismatch (leaving the model
// untouched) unless config, names and shapes all agree.
void apply_state(Model& model, const ModelState& state);

}  // namespace hrt
