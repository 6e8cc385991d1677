// SPDX-License-Identifier: Apache-2.0
#include "dualvae/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "dualvae/ops.hpp"

namespace dualvae::inline DUALVAE_ABI {

namespace {

double eval_scalar(const std::function<Tensor()>& fn) {
    NoTapeScope no_tape;
    Tensor y = fn();
    DUALVAE_REQUIRE(y.numel() == 1, "grad_check needs a scalar-valued function");
    const double v = static_cast<double>(y.item());
    if (!std::isfinite(v)) throw NumericFault("grad_check: function non-finite at a perturbed point");
    return v;
}

void check_coordinates(const std::function<Tensor()>& fn, Tensor& x, std::span<const real> analytic, double eps,
                       GradCheckReport& report) {
    auto xs = x.data();
    const double base = eval_scalar(fn);
    double diff_sq = 0, a_sq = 0, n_sq = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const real saved = xs[i];
        xs[i] = saved + static_cast<real>(eps);
        const double plus = eval_scalar(fn);
        xs[i] = saved - static_cast<real>(eps);
        const double minus = eval_scalar(fn);
        xs[i] = saved;
        const double numeric = (plus - minus) / (2 * eps);
        const double a = static_cast<double>(analytic[i]);
        const double curvature = std::abs(plus - 2 * base + minus) / eps;
        if (curvature > 0.1 * std::max({1.0, std::abs(a), std::abs(numeric)})) {
            report.kinks.push_back(i);
            continue;
        }
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
        const double rel = std::abs(a - numeric) / denom;
        ++report.checked;
        diff_sq += (a - numeric) * (a - numeric);
        a_sq += a * a;
        n_sq += numeric * numeric;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report.norm_rel_error = std::sqrt(diff_sq) / std::max({std::sqrt(a_sq), std::sqrt(n_sq), 1e-12});
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
    DUALVAE_REQUIRE(eps >= 1e-6 && eps <= 1e-2, "grad_check eps must lie in [1e-6, 1e-2]");
    Tensor probe = x.clone();
    probe.set_requires_grad(true);
    std::vector<real> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor y = f(probe);
        DUALVAE_REQUIRE(y.numel() == 1, "grad_check needs a scalar-valued function");
        tape.backward(y);
        analytic.assign(probe.grad().begin(), probe.grad().end());
    }
    GradCheckReport report;
    check_coordinates([&] { return f(probe); }, probe, analytic, eps, report);
    return report;
}

std::vector<ParamGradCheck> grad_check_params(const std::function<Tensor()>& loss,
                                              const std::vector<NamedTensor>& params, double eps) {
    DUALVAE_REQUIRE(eps >= 1e-6 && eps <= 1e-2, "grad_check eps must lie in [1e-6, 1e-2]");
    for (auto p : params) {
        p.tensor.set_requires_grad(true);
        p.tensor.zero_grad();
    }
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor y = loss();
        DUALVAE_REQUIRE(y.numel() == 1, "grad_check needs a scalar-valued function");
        tape.backward(y);
    }
    std::vector<ParamGradCheck> results;
    for (auto p : params) {
        std::vector<real> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
        ParamGradCheck entry{p.name, {}};
        check_coordinates(loss, p.tensor, analytic, eps, entry.report);
        results.push_back(std::move(entry));
    }
    return results;
}

}  // namespace dualvae
