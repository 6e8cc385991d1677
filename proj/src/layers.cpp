// SPDX-License-Identifier: Apache-2.0
#include "dualvae/layers.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dualvae::inline DUALVAE_ABI {

Tensor ParamStore::add(const std::string& name, Tensor tensor) {
    DUALVAE_REQUIRE(!contains(name), "duplicate parameter name " + name);
    tensor.set_requires_grad(true);
    entries_.push_back({name, tensor});
    return tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
    DUALVAE_REQUIRE(it != entries_.end(), "unknown parameter " + name);
    return it->tensor;
}

bool ParamStore::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto e : entries_) e.tensor.zero_grad();
}

std::vector<NamedTensor> ParamStore::with_prefix(const std::string& prefix) const {
    std::vector<NamedTensor> out;
    for (const auto& e : entries_) {
        if (e.name.rfind(prefix, 0) == 0) out.push_back(e);
    }
    return out;
}

Tensor kaiming_normal(const Shape& shape, int fan_in, Rng& rng, real slope) {
    const double gain = std::sqrt(2.0 / (1.0 + static_cast<double>(slope) * slope));
    std::normal_distribution<double> normal(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
    std::vector<real> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<real>(normal(rng));
    return Tensor::from(shape, std::move(values));
}

Conv2dLayer::Conv2dLayer(ParamStore& store, const std::string& name, int in_channels, int out_channels, int kernel,
                         int stride_, Rng& rng, Padding padding_)
    : stride(stride_), padding(padding_) {
    weight = store.add(name + ".weight",
                       kaiming_normal({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng));
    bias = store.add(name + ".bias", Tensor::zeros({out_channels}));
}

LinearLayer::LinearLayer(ParamStore& store, const std::string& name, int in_features, int out_features, Rng& rng) {
    weight = store.add(name + ".weight", kaiming_normal({out_features, in_features}, in_features, rng));
    bias = store.add(name + ".bias", Tensor::zeros({out_features}));
}

LayerNormLayer::LayerNormLayer(ParamStore& store, const std::string& name, int features, int axis_) : axis(axis_) {
    gain = store.add(name + ".gain", Tensor::full({features}, real(1)));
    bias = store.add(name + ".bias", Tensor::zeros({features}));
}

}  // namespace dualvae
