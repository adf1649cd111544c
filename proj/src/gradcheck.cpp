#include "hrt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace hrt {

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                  double eps, double tol) {
    if (!(eps > 0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
    for (const auto& leaf : leaves) {
        if (!leaf.is_leaf() || !leaf.requires_grad()) {
            throw AutogradError("finite_diff_check: every checked tensor must be a trainable leaf");
        }
    }

    for (auto& leaf : leaves) leaf.zero_grad();
    const Tensor loss = f();
    const double base = loss.item();
    if (f().item() != base) {
        throw NonDeterministicError("finite_diff_check: two forward passes on identical inputs disagree");
    }
    loss.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& leaf : leaves) {
        if (leaf.has_grad()) {
            analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
        } else {
            analytic.emplace_back(leaf.numel(), 0.0);
        }
    }

    GradCheckReport report;
    std::size_t worst_leaf = 0, worst_index = 0;
    for (std::size_t l = 0; l < leaves.size(); ++l) {
        auto values = leaves[l].mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double up = f().item();
            values[i] = saved - eps;
            const double down = f().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[l][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > report.max_relative_error) {
                report.max_relative_error = rel;
                worst_leaf = l;
                worst_index = i;
            }
        }
    }
    report.passed = report.max_relative_error <= tol;
    if (!report.passed) {
        report.failing_leaf = worst_leaf;
        report.failing_index = worst_index;
    }
    return report;
}

}  // namespace hrt
