// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every primitive checks its output for NaN/Inf
// and throws NumericFault naming the primitive. When a tape is active and an
// input requires a gradient the primitive records its backward pass.

#pragma once

#include <span>
#include <vector>

#include "dualvae/real.hpp"
#include "dualvae/tensor.hpp"

namespace dualvae::inline DUALVAE_ABI {

enum class Padding { reflect, zero };

// Convolution over NCHW input with an [O,C,kh,kw] kernel; kh and kw must be
// odd and the padding is kh/2 (resp. kw/2). `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              Padding padding = Padding::reflect);

// x:[N,in] weight:[out,in] bias:[out] (may be undefined) -> [N,out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
// a:[M,K] b:[K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);

// Normalises over `axis` (default: last) to zero mean and unit biased
// variance, then applies gain and bias of length dim(axis).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps, int axis = -1);

Tensor upsample_nearest2x(const Tensor& x);
Tensor avg_pool2x(const Tensor& x);
// [N,C,H,W] -> [N,1,H,W]
Tensor channel_mean(const Tensor& x);
// [N,C,H,W] -> [N,C]
Tensor spatial_mean(const Tensor& x);
// [N,C] -> [N,C,H,W]
Tensor broadcast_spatial(const Tensor& x, int height, int width);
// Concatenation along axis 1.
Tensor concat_channels(std::span<const Tensor> parts);
Tensor reshape(const Tensor& x, const Shape& shape);

Tensor leaky_relu(const Tensor& x, real slope = real(0.2));
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);

// Element-wise binary ops. `b` may have the shape of a trailing suffix of
// `a`'s shape, in which case it is broadcast over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, real factor);
Tensor add_scalar(const Tensor& x, real value);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Sum of absolute values; the subgradient at 0 is 0.
Tensor l1_norm(const Tensor& x);
Tensor sq_l2_norm(const Tensor& x);

// Mean negative log-likelihood of integer targets under softmax(logits).
// logits: [N,V], targets: N entries in [0,V).
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// Row gather: table:[V,C] -> [indices.size(), C].
Tensor embedding(const Tensor& table, std::span<const int> indices);

// Forward value of `quantized`, gradient passed unchanged to `pre`.
Tensor straight_through(const Tensor& pre, const Tensor& quantized);

// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, real rate, Rng& rng);

// Multi-head causal self-attention core. q,k,v: [B,T,C] with C divisible by
// heads. Position t attends to positions <= t only.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// Throws NumericFault if any value is non-finite.
void ensure_finite(std::span<const real> values, const char* where);

}  // namespace dualvae
