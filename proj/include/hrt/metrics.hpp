#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace hrt::metrics {

// Row-major single-channel map. Predictions are in [0,1]; ground truths hold
// 0/1 (anything > 0.5 counts as foreground).
struct Map {
    int h = 0;
    int w = 0;
    std::vector<double> v;

    std::size_t size() const { return v.size(); }
    double operator()(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

inline constexpr int kPrThresholds = 256;
inline constexpr double kBeta2 = 0.3;

struct PrPoint {
    double precision = 1.0;
    double recall = 1.0;
};
using PrCurve = std::array<PrPoint, kPrThresholds>;

struct EvalResult {
    double s = 0.0;
    double f_beta = 0.0;
    double e_xi = 0.0;
    double mae = 0.0;
    PrCurve pr{};
};

// (x - min) / (max - min); constant maps are left unchanged.
Map normalize(Map pred);
// 8-bit values to [0,1] (pred) or {0,1} at >= 128 (gt).
Map from_u8_pred(int h, int w, const std::vector<std::uint8_t>& px);
Map from_u8_gt(int h, int w, const std::vector<std::uint8_t>& px);

// All throw std::invalid_argument on a size mismatch.
double mae(const Map& pred, const Map& gt);
double adaptive_threshold(const Map& pred);
double f_measure_adaptive(const Map& pred, const Map& gt);
double s_measure(const Map& pred, const Map& gt, double alpha = 0.5);
double e_measure_adaptive(const Map& pred, const Map& gt);
// Entry t thresholds at pred > t/255.
PrCurve pr_curve(const Map& pred, const Map& gt);

EvalResult evaluate(const Map& pred, const Map& gt);
// Per-image mean of every field, including the PR curve.
EvalResult mean_of(const std::vector<EvalResult>& results);

}  // namespace hrt::metrics
