// SPDX-License-Identifier: Apache-2.0
#include "dualvae/latents.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "dualvae/ops.hpp"

namespace dualvae::inline DUALVAE_ABI {

Codebook::Codebook(int size, int dim, VqSettings settings, Rng& rng)
    : size_(size), dim_(dim), settings_(settings) {
    DUALVAE_REQUIRE(size > 0 && dim > 0, "codebook must have at least one entry and one dimension");
    DUALVAE_REQUIRE(settings.decay >= 0.0 && settings.decay < 1.0, "codebook decay must lie in [0, 1)");
    DUALVAE_REQUIRE(settings.epsilon > 0.0, "codebook smoothing epsilon must be positive");
    embeddings_ = standard_normal({size, dim}, rng);
    ema_size_.assign(static_cast<std::size_t>(size), real(1));
    ema_sum_ = embeddings_.values();
    usage_.assign(static_cast<std::size_t>(size), 0);
}

int Codebook::nearest(std::span<const real> vector) const {
    DUALVAE_REQUIRE(size_ > 0, "quantize against an empty codebook");
    DUALVAE_REQUIRE(static_cast<int>(vector.size()) == dim_, "vector length does not match codebook dimension");
    const auto table = embeddings_.data();
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int i = 0; i < size_; ++i) {
        const real* e = table.data() + static_cast<std::size_t>(i) * dim_;
        double d = 0.0;
        for (int j = 0; j < dim_; ++j) {
            const double diff = static_cast<double>(vector[j]) - e[j];
            d += diff * diff;
        }
        if (d < best_dist) {
            best_dist = d;
            best = i;
        }
    }
    return best;
}

namespace {

struct GridShape {
    int n, d, h, w;
};

GridShape grid_shape(const Tensor& pre_quant, int dim) {
    DUALVAE_REQUIRE(pre_quant.rank() == 4, "pre_quant must be [N,D,h,w], got " + shape_str(pre_quant.shape()));
    DUALVAE_REQUIRE(pre_quant.dim(1) == dim, "pre_quant channel count " + std::to_string(pre_quant.dim(1)) +
                                                 " does not match codebook dimension " + std::to_string(dim));
    return {pre_quant.dim(0), pre_quant.dim(1), pre_quant.dim(2), pre_quant.dim(3)};
}

Tensor commitment(const Tensor& pre_quant, const Tensor& target, real beta) {
    const GridShape g{pre_quant.dim(0), pre_quant.dim(1), pre_quant.dim(2), pre_quant.dim(3)};
    const real positions = static_cast<real>(g.n * g.h * g.w);
    return scale(sq_l2_norm(sub(pre_quant, target)), beta / positions);
}

}  // namespace

QuantizeResult quantize(const Tensor& pre_quant, const Codebook& codebook, real beta) {
    DUALVAE_REQUIRE(codebook.size() > 0, "quantize against an empty codebook");
    const GridShape g = grid_shape(pre_quant, codebook.dim());
    const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
    const auto src = pre_quant.data();
    const auto table = codebook.embeddings().data();

    QuantizeResult out;
    out.quantized = Tensor::zeros(pre_quant.shape());
    auto dst = out.quantized.data();
    std::vector<real> v(static_cast<std::size_t>(g.d));
    for (int n = 0; n < g.n; ++n) {
        TokenGrid grid{g.h, g.w, std::vector<int>(plane)};
        const std::size_t base = static_cast<std::size_t>(n) * g.d * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            for (int j = 0; j < g.d; ++j) v[static_cast<std::size_t>(j)] = src[base + j * plane + p];
            const int code = codebook.nearest(v);
            grid.indices[p] = code;
            for (int j = 0; j < g.d; ++j) {
                dst[base + j * plane + p] = table[static_cast<std::size_t>(code) * g.d + j];
            }
        }
        out.tokens.push_back(std::move(grid));
    }
    out.z_q = straight_through(pre_quant, out.quantized);
    out.commit_loss = commitment(pre_quant, out.quantized, beta);
    return out;
}

QuantizeResult quantize_frozen(const Tensor& pre_quant, const QuantizeResult& frozen, const Tensor& pre_at_freeze,
                               real beta) {
    DUALVAE_REQUIRE(pre_quant.shape() == frozen.quantized.shape() && pre_at_freeze.shape() == pre_quant.shape(),
                    "frozen quantization does not match pre_quant shape");
    QuantizeResult out;
    out.tokens = frozen.tokens;
    out.quantized = frozen.quantized;
    Tensor offset = Tensor::zeros(pre_quant.shape());
    auto o = offset.data();
    const auto q = frozen.quantized.data();
    const auto p0 = pre_at_freeze.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = q[i] - p0[i];
    out.z_q = add(pre_quant, offset);
    out.commit_loss = commitment(pre_quant, frozen.quantized, beta);
    return out;
}

Tensor embed_tokens(const Codebook& codebook, const std::vector<TokenGrid>& tokens) {
    DUALVAE_REQUIRE(!tokens.empty(), "no token grids to embed");
    const int h = tokens.front().height, w = tokens.front().width, d = codebook.dim();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out = Tensor::zeros({static_cast<int>(tokens.size()), d, h, w});
    auto dst = out.data();
    const auto table = codebook.embeddings().data();
    for (std::size_t n = 0; n < tokens.size(); ++n) {
        const TokenGrid& grid = tokens[n];
        DUALVAE_REQUIRE(grid.height == h && grid.width == w && grid.indices.size() == plane,
                        "token grids in a batch must share one shape");
        for (std::size_t p = 0; p < plane; ++p) {
            const int code = grid.indices[p];
            DUALVAE_REQUIRE(code >= 0 && code < codebook.size(), "token " + std::to_string(code) +
                                                                     " outside the codebook");
            for (int j = 0; j < d; ++j) {
                dst[(n * d + j) * plane + p] = table[static_cast<std::size_t>(code) * d + j];
            }
        }
    }
    return out;
}

void init_from_vectors(Codebook& codebook, const Tensor& pre_quant, Rng& rng) {
    const GridShape g = grid_shape(pre_quant, codebook.dim());
    const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
    const std::size_t positions = static_cast<std::size_t>(g.n) * plane;
    std::vector<std::size_t> order(positions);
    for (std::size_t i = 0; i < positions; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<std::size_t> any(0, positions - 1);
    const auto src = pre_quant.data();
    auto emb = codebook.embeddings().data();
    for (int i = 0; i < codebook.size(); ++i) {
        const std::size_t pick = static_cast<std::size_t>(i) < positions ? order[static_cast<std::size_t>(i)] : any(rng);
        const std::size_t n = pick / plane, p = pick % plane;
        for (int j = 0; j < g.d; ++j) {
            emb[static_cast<std::size_t>(i) * g.d + j] = src[(n * g.d + j) * plane + p];
        }
    }
    codebook.ema_cluster_size().assign(static_cast<std::size_t>(codebook.size()), real(1));
    codebook.ema_sum() = codebook.embeddings().values();
}

void ema_update(Codebook& codebook, const std::vector<TokenGrid>& assignments, const Tensor& pre_quant) {
    const GridShape g = grid_shape(pre_quant, codebook.dim());
    DUALVAE_REQUIRE(static_cast<int>(assignments.size()) == g.n, "one token grid per batch item is required");
    const int size = codebook.size(), d = g.d;
    const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
    std::vector<double> counts(static_cast<std::size_t>(size), 0.0);
    std::vector<double> sums(static_cast<std::size_t>(size) * d, 0.0);
    const auto src = pre_quant.data();
    for (int n = 0; n < g.n; ++n) {
        const TokenGrid& grid = assignments[static_cast<std::size_t>(n)];
        DUALVAE_REQUIRE(grid.indices.size() == plane, "token grid does not match pre_quant spatial size");
        const std::size_t base = static_cast<std::size_t>(n) * d * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            const int code = grid.indices[p];
            DUALVAE_REQUIRE(code >= 0 && code < size, "assignment outside the codebook");
            counts[static_cast<std::size_t>(code)] += 1.0;
            ++codebook.usage()[static_cast<std::size_t>(code)];
            for (int j = 0; j < d; ++j) sums[static_cast<std::size_t>(code) * d + j] += src[base + j * plane + p];
        }
    }

    const double gamma = codebook.settings().decay, eps = codebook.settings().epsilon;
    auto& ema_size = codebook.ema_cluster_size();
    auto& ema_sum = codebook.ema_sum();
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        auto& s = ema_size[static_cast<std::size_t>(i)];
        s = static_cast<real>(gamma * s + (1.0 - gamma) * counts[static_cast<std::size_t>(i)]);
        total += s;
    }
    for (std::size_t k = 0; k < ema_sum.size(); ++k) {
        ema_sum[k] = static_cast<real>(gamma * ema_sum[k] + (1.0 - gamma) * sums[k]);
    }
    auto emb = codebook.embeddings().data();
    for (int i = 0; i < size; ++i) {
        const double smoothed = (ema_size[static_cast<std::size_t>(i)] + eps) / (total + size * eps) * total;
        for (int j = 0; j < d; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * d + j;
            emb[k] = static_cast<real>(ema_sum[k] / smoothed);
        }
    }
    ensure_finite(emb, "ema_update");
}

Tensor standard_normal(const Shape& shape, Rng& rng) {
    Tensor out = Tensor::zeros(shape);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : out.data()) v = static_cast<real>(normal(rng));
    return out;
}

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& noise) {
    DUALVAE_REQUIRE(mu.shape() == logvar.shape() && mu.shape() == noise.shape(),
                    "reparameterize needs equal shapes for mu, logvar and noise");
    return add(mu, mul(exp(scale(logvar, real(0.5))), noise));
}

Tensor gaussian_kl(const Tensor& mu, const Tensor& logvar) {
    DUALVAE_REQUIRE(mu.rank() == 2 && mu.shape() == logvar.shape(), "gaussian_kl expects [N,d] mu and logvar");
    const real batch = static_cast<real>(mu.dim(0));
    const Tensor per_entry = sub(add(mul(mu, mu), exp(logvar)), add_scalar(logvar, real(1)));
    return scale(sum(per_entry), real(0.5) / batch);
}

}  // namespace dualvae
