// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "dualvae/grad_check.hpp"
#include "dualvae/ops.hpp"
#include "dualvae/tensor.hpp"

namespace dualvae::inline DUALVAE_ABI {

/// Ordered registry of named trainable tensors. Handles alias the tensors held
/// by the owning layers, so updates through the store are seen by the layers.
class ParamStore {
public:
    Tensor add(const std::string& name, Tensor tensor);
    const std::vector<NamedTensor>& entries() const { return entries_; }
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::size_t parameter_count() const;
    void zero_grad();
    /// Names under `prefix`, e.g. "dec_x." for the merge decoder.
    std::vector<NamedTensor> with_prefix(const std::string& prefix) const;

private:
    std::vector<NamedTensor> entries_;
};

/// Normal(0, gain^2 / fan_in) with the leaky-relu gain sqrt(2 / (1 + slope^2)).
Tensor kaiming_normal(const Shape& shape, int fan_in, Rng& rng, real slope = real(0.2));

struct Conv2dLayer {
    Tensor weight;  // [out, in, k, k]
    Tensor bias;    // [out]
    int stride = 1;
    Padding padding = Padding::reflect;

    Conv2dLayer() = default;
    Conv2dLayer(ParamStore& store, const std::string& name, int in_channels, int out_channels, int kernel,
                int stride, Rng& rng, Padding padding = Padding::reflect);
    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
};

struct LinearLayer {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]

    LinearLayer() = default;
    LinearLayer(ParamStore& store, const std::string& name, int in_features, int out_features, Rng& rng);
    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNormLayer {
    Tensor gain;
    Tensor bias;
    real eps = real(1e-5);
    int axis = -1;

    LayerNormLayer() = default;
    LayerNormLayer(ParamStore& store, const std::string& name, int features, int axis);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps, axis); }
};

}  // namespace dualvae
