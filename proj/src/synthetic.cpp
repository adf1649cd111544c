#include "hrt/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "hrt/ops.hpp"
#include "hrt/rng.hpp"

namespace hrt {

namespace {

struct Object {
    bool ellipse = true;
    double cy = 0, cx = 0, ry = 0, rx = 0;
    std::array<double, 3> color{};
    double depth = 0;      // in (0,1], larger is nearer
    double ramp_dir = 0;   // depth ramp orientation
    bool in_primary = true;
    bool in_supp = true;

    bool covers(double y, double x) const {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        if (ellipse) return dy * dy + dx * dx <= 1.0;
        return std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
    }
    // Normalised radial position in [0,1] at (y,x).
    double radius(double y, double x) const {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        return std::min(1.0, std::sqrt(dy * dy + dx * dx));
    }
};

std::array<double, 3> random_color(Rng& rng) {
    std::array<double, 3> c{};
    for (auto& v : c) v = rng.uniform(0.0, 1.0);
    // Push one channel to an extreme so objects stand out from the muted background.
    c[rng.below(3)] = rng.uniform() < 0.5 ? rng.uniform(0.0, 0.1) : rng.uniform(0.9, 1.0);
    return c;
}

// Picks fraction * n distinct indices out of `pool`, rounding stochastically so
// the expected share of picked objects is exactly `fraction`.
std::vector<int> pick(std::vector<int> pool, double fraction, int n, Rng& rng) {
    const double want = fraction * n;
    int k = static_cast<int>(std::floor(want));
    if (rng.uniform() < want - k) ++k;
    k = std::min(static_cast<int>(pool.size()), k);
    for (int i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    pool.resize(static_cast<std::size_t>(k));
    return pool;
}

// Separable box blur with edge clamping.
std::vector<double> box_blur(const std::vector<double>& src, int h, int w, int r) {
    if (r <= 0) return src;
    std::vector<double> tmp(src.size()), out(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int d = -r; d <= r; ++d) s += src[y * w + std::clamp(x + d, 0, w - 1)];
            tmp[y * w + x] = s / (2 * r + 1);
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int d = -r; d <= r; ++d) s += tmp[std::clamp(y + d, 0, h - 1) * w + x];
            out[y * w + x] = s / (2 * r + 1);
        }
    return out;
}

}  // namespace

void SyntheticSceneSpec::validate() const {
    if (image_h <= 0 || image_w <= 0) throw ConfigError("synthetic: image size must be positive");
    if (n_objects < 0) throw ConfigError("synthetic: n_objects must be non-negative");
    if (!(noise_level >= 0 && noise_level <= 1)) throw ConfigError("synthetic: noise_level must be in [0,1]");
    if (!(supp_corruption >= 0 && supp_corruption <= 1)) throw ConfigError("synthetic: supp_corruption must be in [0,1]");
    if (!(primary_camouflage >= 0 && primary_camouflage <= 1))
        throw ConfigError("synthetic: primary_camouflage must be in [0,1]");
    if (focal_slices < 1 || focal_slices > kFocalSlices) throw ConfigError("synthetic: focal_slices must be in [1,12]");
}

SaliencySample generate(const SyntheticSceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed * 0x9E3779B97F4A7C15ULL + 0x5A17);
    const int h = spec.image_h, w = spec.image_w, hw = h * w;
    const double scale = std::min(h, w);

    // Background: muted base colour with low-frequency sinusoidal texture.
    std::array<double, 3> base{};
    for (auto& v : base) v = rng.uniform(0.3, 0.7);
    struct Wave { double fy, fx, phase, amp; };
    std::array<std::array<Wave, 3>, 3> waves{};
    for (auto& ch : waves)
        for (auto& wv : ch) wv = {rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.0, 2 * std::numbers::pi),
                                  rng.uniform(0.03, 0.08)};

    std::vector<Object> objects(static_cast<std::size_t>(spec.n_objects));
    for (auto& o : objects) {
        o.ellipse = rng.below(2) == 0;
        o.ry = rng.uniform(0.12, 0.25) * scale;
        o.rx = rng.uniform(0.12, 0.25) * scale;
        o.cy = rng.uniform(o.ry, h - o.ry);
        o.cx = rng.uniform(o.rx, w - o.rx);
        o.color = random_color(rng);
        o.depth = rng.uniform(0.6, 1.0);
        o.ramp_dir = rng.uniform(0.0, 2 * std::numbers::pi);
    }
    std::vector<int> all(objects.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    for (int i : pick(all, spec.supp_corruption, spec.n_objects, rng)) objects[i].in_supp = false;
    std::vector<int> supp_visible;
    for (int i : all)
        if (objects[i].in_supp) supp_visible.push_back(i);
    for (int i : pick(supp_visible, spec.primary_camouflage, spec.n_objects, rng)) objects[i].in_primary = false;

    std::vector<double> image(3 * static_cast<std::size_t>(hw)), gt(static_cast<std::size_t>(hw), 0.0);
    // Index of the topmost object per pixel, separately per channel view.
    std::vector<int> top_primary(hw, -1), top_supp(hw, -1), top_any(hw, -1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int p = y * w + x;
            for (int i = 0; i < spec.n_objects; ++i) {
                if (!objects[i].covers(y + 0.5, x + 0.5)) continue;
                top_any[p] = i;
                if (objects[i].in_primary) top_primary[p] = i;
                if (objects[i].in_supp) top_supp[p] = i;
            }
            if (top_any[p] >= 0) gt[p] = 1.0;
            for (int c = 0; c < 3; ++c) {
                double v = base[c];
                for (const auto& wv : waves[c])
                    v += wv.amp * std::sin(2 * std::numbers::pi * (wv.fy * y / h + wv.fx * x / w) + wv.phase);
                if (top_primary[p] >= 0) v = objects[top_primary[p]].color[c];
                image[c * hw + p] = v;
            }
        }

    auto add_noise = [&](std::vector<double>& v) {
        for (auto& x : v) x = std::clamp(x + spec.noise_level * rng.uniform(-1.0, 1.0), 0.0, 1.0);
    };
    add_noise(image);

    SaliencySample s;
    s.image = Tensor({1, 3, h, w}, std::move(image));
    s.gt = Tensor({1, 1, h, w}, std::move(gt));

    if (spec.modality == Modality::focal_stack) {
        // Each slice is the scene with supplementary-visible objects painted in
        // their colour, blurred by distance from the slice's focus depth.
        std::vector<Tensor> slices;
        for (int k = 0; k < spec.focal_slices; ++k) {
            const double focus = spec.focal_slices == 1 ? 1.0 : 0.2 + 0.8 * k / (spec.focal_slices - 1);
            std::vector<double> slice(3 * static_cast<std::size_t>(hw));
            std::vector<double> depth(static_cast<std::size_t>(hw), 0.1);
            for (int p = 0; p < hw; ++p)
                if (top_supp[p] >= 0) depth[p] = objects[top_supp[p]].depth;
            for (int c = 0; c < 3; ++c) {
                std::vector<double> sharp(static_cast<std::size_t>(hw)), blurred;
                for (int p = 0; p < hw; ++p) sharp[p] = top_supp[p] >= 0 ? objects[top_supp[p]].color[c] : base[c];
                blurred = box_blur(sharp, h, w, std::max(1, static_cast<int>(scale / 16)));
                for (int p = 0; p < hw; ++p) {
                    const double a = std::min(1.0, std::abs(depth[p] - focus) * 2.0);
                    slice[c * hw + p] = (1 - a) * sharp[p] + a * blurred[p];
                }
            }
            add_noise(slice);
            slices.emplace_back(Shape{1, 3, h, w}, std::move(slice));
        }
        s.supp = SupplementaryInput::focal(slices);
    } else {
        std::vector<double> supp(static_cast<std::size_t>(hw));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int p = y * w + x;
                const int i = top_supp[p];
                if (spec.modality == Modality::depth) {
                    // Far background ramp; objects near with a gentle planar ramp.
                    double v = 0.1 + 0.15 * y / h;
                    if (i >= 0) {
                        const Object& o = objects[i];
                        const double t = ((y - o.cy) * std::sin(o.ramp_dir) + (x - o.cx) * std::cos(o.ramp_dir)) /
                                         std::max(o.ry, o.rx);
                        v = o.depth - 0.1 * (t + 1) / 2;
                    }
                    supp[p] = v;
                } else {
                    // Cool background, objects glow hottest at their centre.
                    double v = 0.15;
                    if (i >= 0) {
                        const double r = objects[i].radius(y + 0.5, x + 0.5);
                        v = 0.55 + 0.4 * objects[i].depth * std::exp(-2.0 * r * r);
                    }
                    supp[p] = v;
                }
            }
        add_noise(supp);
        s.supp = SupplementaryInput::single(spec.modality, Tensor({1, 1, h, w}, std::move(supp)));
    }
    return s;
}

SaliencySample stack(const std::vector<SaliencySample>& samples) {
    std::vector<Tensor> images, supps, gts;
    for (const auto& s : samples) {
        images.push_back(s.image);
        supps.push_back(s.supp.data);
        gts.push_back(s.gt);
    }
    SaliencySample out;
    out.image = ops::concat(images, 0);
    out.supp = {samples.front().supp.kind, ops::concat(supps, 0)};
    out.gt = ops::concat(gts, 0);
    return out;
}

}  // namespace hrt
