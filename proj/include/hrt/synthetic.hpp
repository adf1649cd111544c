#pragma once

#include <cstdint>
#include <vector>

#include "hrt/aux_stream.hpp"
#include "hrt/config.hpp"

namespace hrt {

struct SyntheticSceneSpec {
    std::uint64_t seed = 0;
    int image_h = 64;
    int image_w = 64;
    int n_objects = 2;
    Modality modality = Modality::depth;
    double noise_level = 0.05;
    // Expected fraction of objects left out of the supplementary channel.
    double supp_corruption = 0.0;
    // Expected fraction of objects left out of the primary image (drawn from the objects
    // that remain visible in the supplementary channel).
    double primary_camouflage = 0.0;
    // Number of real focus slices; padded to 12 with zero slices.
    int focal_slices = 5;

    // Throws ConfigError on out-of-range fields.
    void validate() const;
};

struct SaliencySample {
    Tensor image;             // (1,3,H,W) in [0,1]
    SupplementaryInput supp;  // (1,1,H,W) or (1,36,H,W) in [0,1]
    Tensor gt;                // (1,1,H,W) binary
};

// Textured background plus coloured ellipses and rectangles. Bit-identical
// output for identical specs.
SaliencySample generate(const SyntheticSceneSpec& spec);

// Stacks single-image samples into one batch.
SaliencySample stack(const std::vector<SaliencySample>& samples);

}  // namespace hrt
