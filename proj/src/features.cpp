#include "hrt/features.hpp"

#include <string>

namespace hrt {

Shape level_shape(const ModelConfig& config, int level, std::int64_t batch) {
    return {batch, config.branch_channels[static_cast<std::size_t>(level)], config.level_h(level),
            config.level_w(level)};
}

void check_features(const MultiResFeatures& f, const ModelConfig& config, std::int64_t batch, const char* what) {
    for (int i = 0; i < 4; ++i) {
        const Shape want = level_shape(config, i, batch);
        if (!f[i].defined() || f[i].shape() != want) {
            throw ShapeError(std::string(what) + " level " + std::to_string(i + 1) + ": expected " +
                             shape_str(want) + ", got " + (f[i].defined() ? shape_str(f[i].shape()) : "nothing"));
        }
    }
}

}  // namespace hrt
