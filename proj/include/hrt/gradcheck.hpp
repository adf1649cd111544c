#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "hrt/tensor.hpp"

namespace hrt {

struct GradCheckReport {
    double max_relative_error = 0.0;
    // Worst element when the check fails: leaf position and flat index into it.
    std::optional<std::size_t> failing_leaf;
    std::optional<std::size_t> failing_index;
    bool passed = true;
};

class NonDeterministicError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Compares reverse-mode gradients of the scalar `f` with respect to `leaves`
// against central differences (f(x+eps) - f(x-eps)) / 2eps, element by element.
// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
// `f` must rebuild its graph on every call; leaves are perturbed in place and
// restored before returning.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                  double eps, double tol);

}  // namespace hrt
