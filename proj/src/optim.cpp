// SPDX-License-Identifier: Apache-2.0
#include "dualvae/optim.hpp"

#include <cmath>

namespace dualvae::inline DUALVAE_ABI {

Adam::Adam(const ParamStore& params, AdamSettings settings) : params_(params.entries()), settings_(settings) {
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), real(0));
        v_.emplace_back(p.tensor.numel(), real(0));
    }
}

void Adam::step() {
    ++steps_;
    const double b1 = settings_.beta1, b2 = settings_.beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const double step_size = settings_.lr / correction1;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& t = params_[k].tensor;
        if (!t.has_grad()) continue;
        auto w = t.data();
        auto g = t.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            m[i] = static_cast<real>(b1 * m[i] + (1.0 - b1) * gi);
            v[i] = static_cast<real>(b2 * v[i] + (1.0 - b2) * gi * gi);
            const double denom = std::sqrt(static_cast<double>(v[i]) / correction2) + settings_.eps;
            w[i] = static_cast<real>(w[i] - step_size * m[i] / denom);
        }
        ensure_finite(w, ("adam update of " + params_[k].name).c_str());
        t.zero_grad();
    }
}

}  // namespace dualvae
