// SPDX-License-Identifier: Apache-2.0
//
// Small helpers shared by the unit tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "dualvae/tensor.hpp"

namespace test_support {

using dualvae::real;
using dualvae::Rng;
using dualvae::Shape;
using dualvae::Tensor;

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<real> v(dualvae::shape_numel(shape));
    for (auto& x : v) x = static_cast<real>(u(rng));
    return Tensor::from(shape, std::move(v), requires_grad);
}

inline std::vector<double> to_doubles(const Tensor& t) {
    return {t.data().begin(), t.data().end()};
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.at(i)) - double(b.at(i))));
    return m;
}

}  // namespace test_support
