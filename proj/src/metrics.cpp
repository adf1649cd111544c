#include "hrt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hrt::metrics {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void check_pair(const Map& a, const Map& b) {
    if (a.h != b.h || a.w != b.w || a.v.size() != b.v.size() || a.v.size() != static_cast<std::size_t>(a.h) * a.w) {
        throw std::invalid_argument("metrics: prediction and ground truth sizes differ");
    }
    if (a.v.empty()) throw std::invalid_argument("metrics: empty map");
}

bool fg(double g) { return g > 0.5; }

// Binarisation used by the adaptive measures. The extra p > 0 keeps an
// all-zero prediction (threshold 0) from turning into an all-foreground mask.
bool on(double p, double t) { return p >= t && p > 0.0; }

// Structural similarity of one quadrant [y0,y1) x [x0,x1).
double quadrant_ssim(const Map& p, const Map& g, int y0, int y1, int x0, int x1) {
    const double n = static_cast<double>(y1 - y0) * (x1 - x0);
    double mx = 0, my = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            mx += p(y, x);
            my += fg(g(y, x)) ? 1.0 : 0.0;
        }
    mx /= n;
    my /= n;
    double sx = 0, sy = 0, sxy = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const double dx = p(y, x) - mx, dy = (fg(g(y, x)) ? 1.0 : 0.0) - my;
            sx += dx * dx;
            sy += dy * dy;
            sxy += dx * dy;
        }
    sx /= n - 1 + kEps;
    sy /= n - 1 + kEps;
    sxy /= n - 1 + kEps;
    const double a = 4 * mx * my * sxy;
    const double b = (mx * mx + my * my) * (sx + sy);
    if (a != 0) return a / b;
    return b == 0 ? 1.0 : 0.0;
}

// 2x / (x^2 + 1 + sigma) over the masked pixels of `vals`.
double object_score(const std::vector<double>& vals) {
    if (vals.empty()) return 0.0;
    double m = 0;
    for (double v : vals) m += v;
    m /= static_cast<double>(vals.size());
    double var = 0;
    for (double v : vals) var += (v - m) * (v - m);
    const double sd = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
    return 2 * m / (m * m + 1 + sd + kEps);
}

}  // namespace

Map normalize(Map pred) {
    if (pred.v.empty()) return pred;
    const auto [lo, hi] = std::minmax_element(pred.v.begin(), pred.v.end());
    const double mn = *lo, mx = *hi;
    if (mx > mn) {
        for (auto& x : pred.v) x = (x - mn) / (mx - mn);
    }
    return pred;
}

Map from_u8_pred(int h, int w, const std::vector<std::uint8_t>& px) {
    Map m{h, w, std::vector<double>(px.size())};
    for (std::size_t i = 0; i < px.size(); ++i) m.v[i] = px[i] / 255.0;
    return m;
}

Map from_u8_gt(int h, int w, const std::vector<std::uint8_t>& px) {
    Map m{h, w, std::vector<double>(px.size())};
    for (std::size_t i = 0; i < px.size(); ++i) m.v[i] = px[i] >= 128 ? 1.0 : 0.0;
    return m;
}

double mae(const Map& pred, const Map& gt) {
    check_pair(pred, gt);
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred.v[i] - (fg(gt.v[i]) ? 1.0 : 0.0));
    return s / static_cast<double>(pred.size());
}

double adaptive_threshold(const Map& pred) {
    double s = 0;
    for (double p : pred.v) s += p;
    return std::min(2 * s / static_cast<double>(pred.size()), 1.0);
}

double f_measure_adaptive(const Map& pred, const Map& gt) {
    check_pair(pred, gt);
    const double t = adaptive_threshold(pred);
    std::int64_t tp = 0, pp = 0, gp = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool b = on(pred.v[i], t), g = fg(gt.v[i]);
        tp += b && g;
        pp += b;
        gp += g;
    }
    const double p = pp == 0 ? 1.0 : static_cast<double>(tp) / pp;
    const double r = gp == 0 ? 1.0 : static_cast<double>(tp) / gp;
    if (p + r == 0) return 0.0;
    return (1 + kBeta2) * p * r / (kBeta2 * p + r);
}

double s_measure(const Map& pred, const Map& gt, double alpha) {
    check_pair(pred, gt);
    const double n = static_cast<double>(pred.size());
    double gmean = 0, pmean = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        gmean += fg(gt.v[i]) ? 1.0 : 0.0;
        pmean += pred.v[i];
    }
    gmean /= n;
    pmean /= n;
    if (gmean == 0) return 1 - pmean;
    if (gmean == 1) return pmean;

    // Object term: foreground and background similarity.
    std::vector<double> fgv, bgv;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (fg(gt.v[i])) {
            fgv.push_back(pred.v[i]);
        } else {
            bgv.push_back(1 - pred.v[i]);
        }
    }
    const double so = gmean * object_score(fgv) + (1 - gmean) * object_score(bgv);

    // Region term: split at the rounded foreground centroid (1-based column/row count).
    double cy = 0, cx = 0, cnt = 0;
    for (int y = 0; y < gt.h; ++y)
        for (int x = 0; x < gt.w; ++x)
            if (fg(gt(y, x))) {
                cy += y;
                cx += x;
                ++cnt;
            }
    const int xs = static_cast<int>(std::nearbyint(cx / cnt)) + 1;
    const int ys = static_cast<int>(std::nearbyint(cy / cnt)) + 1;
    const int h = gt.h, w = gt.w;
    const double area = static_cast<double>(h) * w;
    const double w1 = static_cast<double>(xs) * ys / area;
    const double w2 = static_cast<double>(ys) * (w - xs) / area;
    const double w3 = static_cast<double>(h - ys) * xs / area;
    const double w4 = 1 - w1 - w2 - w3;
    auto part = [&](double weight, int y0, int y1, int x0, int x1) {
        if (y1 <= y0 || x1 <= x0) return 0.0;
        return weight * quadrant_ssim(pred, gt, y0, y1, x0, x1);
    };
    const double sr = part(w1, 0, ys, 0, xs) + part(w2, 0, ys, xs, w) + part(w3, ys, h, 0, xs) + part(w4, ys, h, xs, w);
    return std::clamp(alpha * so + (1 - alpha) * sr, 0.0, 1.0);
}

double e_measure_adaptive(const Map& pred, const Map& gt) {
    check_pair(pred, gt);
    const double t = adaptive_threshold(pred);
    const std::int64_t n = static_cast<std::int64_t>(pred.size());
    std::int64_t tp = 0, fp = 0, gp = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool b = on(pred.v[i], t), g = fg(gt.v[i]);
        tp += b && g;
        fp += b && !g;
        gp += g;
    }
    const std::int64_t pp = tp + fp, pn = n - pp;
    double total = 0;
    if (gp == 0) {
        total = static_cast<double>(pn);
    } else if (gp == n) {
        total = static_cast<double>(pp);
    } else {
        const std::int64_t fn = gp - tp, tn = pn - fn;
        const double mp = static_cast<double>(pp) / n, mg = static_cast<double>(gp) / n;
        const double pf = 1 - mp, pb = 0 - mp, gf = 1 - mg, gb = 0 - mg;
        const std::int64_t counts[4] = {tp, fp, fn, tn};
        const double a[4] = {pf, pf, pb, pb};
        const double b[4] = {gf, gb, gf, gb};
        for (int k = 0; k < 4; ++k) {
            const double den = a[k] * a[k] + b[k] * b[k];
            const double align = den == 0 ? 0.0 : 2 * (a[k] * b[k]) / den;
            total += (align + 1) * (align + 1) / 4 * static_cast<double>(counts[k]);
        }
    }
    return total / static_cast<double>(n);
}

PrCurve pr_curve(const Map& pred, const Map& gt) {
    check_pair(pred, gt);
    // Histogram predictions by the number of thresholds they exceed.
    std::array<std::int64_t, kPrThresholds + 1> fg_above{}, all_above{};
    std::int64_t gp = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        // Count of t in [0,255] with p > t/255.
        int k = std::max(0, static_cast<int>(pred.v[i] * 255.0) - 1);
        while (k < kPrThresholds && pred.v[i] > k / 255.0) ++k;
        all_above[k]++;
        if (fg(gt.v[i])) {
            fg_above[k]++;
            ++gp;
        }
    }
    PrCurve out{};
    std::int64_t tp = 0, pp = 0;
    for (int t = kPrThresholds - 1; t >= 0; --t) {
        tp += fg_above[t + 1];
        pp += all_above[t + 1];
        out[t].precision = pp == 0 ? 1.0 : static_cast<double>(tp) / pp;
        out[t].recall = gp == 0 ? 1.0 : static_cast<double>(tp) / gp;
    }
    return out;
}

EvalResult evaluate(const Map& pred, const Map& gt) {
    return {s_measure(pred, gt), f_measure_adaptive(pred, gt), e_measure_adaptive(pred, gt), mae(pred, gt),
            pr_curve(pred, gt)};
}

EvalResult mean_of(const std::vector<EvalResult>& results) {
    EvalResult m;
    for (auto& p : m.pr) p = {0.0, 0.0};
    if (results.empty()) return m;
    for (const auto& r : results) {
        m.s += r.s;
        m.f_beta += r.f_beta;
        m.e_xi += r.e_xi;
        m.mae += r.mae;
        for (int t = 0; t < kPrThresholds; ++t) {
            m.pr[t].precision += r.pr[t].precision;
            m.pr[t].recall += r.pr[t].recall;
        }
    }
    const double n = static_cast<double>(results.size());
    m.s /= n;
    m.f_beta /= n;
    m.e_xi /= n;
    m.mae /= n;
    for (auto& p : m.pr) {
        p.precision /= n;
        p.recall /= n;
    }
    return m;
}

}  // namespace hrt::metrics
