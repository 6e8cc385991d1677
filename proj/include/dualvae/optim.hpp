// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualvae/layers.hpp"

namespace dualvae::inline DUALVAE_ABI {

struct AdamSettings {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction over every tensor of a ParamStore.
class Adam {
public:
    Adam(const ParamStore& params, AdamSettings settings);

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Throws NumericFault if any parameter becomes non-finite.
    void step();

    std::int64_t steps() const { return steps_; }
    const AdamSettings& settings() const { return settings_; }

    // Moment access for checkpointing, index-aligned with params.entries().
    std::vector<std::vector<real>>& first_moments() { return m_; }
    std::vector<std::vector<real>>& second_moments() { return v_; }
    const std::vector<std::vector<real>>& first_moments() const { return m_; }
    const std::vector<std::vector<real>>& second_moments() const { return v_; }
    void set_steps(std::int64_t steps) { steps_ = steps; }

private:
    std::vector<NamedTensor> params_;
    AdamSettings settings_;
    std::vector<std::vector<real>> m_;
    std::vector<std::vector<real>> v_;
    std::int64_t steps_ = 0;
};

}  // namespace dualvae
