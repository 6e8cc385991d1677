// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle for reverse-mode gradients. Meaningful
// only in the 64-bit build.

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dualvae/tensor.hpp"

namespace dualvae::inline DUALVAE_ABI {

struct GradCheckReport {
    // max over checked coordinates of |analytic - central| / max(|analytic|, |central|, 1e-12)
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    // Coordinates where the function has a kink (one-sided slopes disagree);
    // reported but excluded from max_rel_error.
    std::vector<std::size_t> kinks;
    // ||analytic - central||_2 / max(||analytic||_2, ||central||_2, 1e-12) over non-kink coordinates.
    double norm_rel_error = 0.0;
};

/// Checks d f / d x for a scalar-valued f. eps must lie in [1e-6, 1e-2].
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-6);

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct ParamGradCheck {
    std::string name;
    GradCheckReport report;
};

/// Checks the gradient of a scalar closure w.r.t. every coordinate of every
/// listed tensor (perturbed in place and restored). The closure must be a
/// deterministic function of the tensors' current values.
std::vector<ParamGradCheck> grad_check_params(const std::function<Tensor()>& loss,
                                              const std::vector<NamedTensor>& params, double eps = 1e-6);

}  // namespace dualvae
