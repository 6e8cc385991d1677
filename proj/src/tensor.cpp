// SPDX-License-Identifier: Apache-2.0
#include "dualvae/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace dualvae::inline DUALVAE_ABI {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int extent : shape) {
        DUALVAE_REQUIRE(extent > 0, "tensor extents must be positive, got " + shape_str(shape));
        n *= static_cast<std::size_t>(extent);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, real(0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, real value, bool requires_grad) {
    auto storage = std::make_shared<TensorStorage>();
    storage->shape = shape;
    storage->data.assign(shape_numel(shape), value);
    storage->requires_grad = requires_grad;
    return Tensor(std::move(storage));
}

Tensor Tensor::from(const Shape& shape, std::vector<real> values, bool requires_grad) {
    DUALVAE_REQUIRE(values.size() == shape_numel(shape),
                    "value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
    auto storage = std::make_shared<TensorStorage>();
    storage->shape = shape;
    storage->data = std::move(values);
    storage->requires_grad = requires_grad;
    return Tensor(std::move(storage));
}

Tensor Tensor::scalar(real value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

int Tensor::dim(int axis) const {
    const auto& s = shape();
    if (axis < 0) axis += static_cast<int>(s.size());
    DUALVAE_REQUIRE(axis >= 0 && axis < static_cast<int>(s.size()), "axis out of range for " + shape_str(s));
    return s[static_cast<std::size_t>(axis)];
}

std::span<real> Tensor::grad() const {
    DUALVAE_REQUIRE(storage_ != nullptr, "use of an undefined tensor");
    auto& st = *storage_;
    if (st.grad.empty()) st.grad.assign(st.data.size(), real(0));
    return st.grad;
}

void Tensor::zero_grad() {
    auto& st = storage();
    std::fill(st.grad.begin(), st.grad.end(), real(0));
}

real Tensor::item() const {
    DUALVAE_REQUIRE(numel() == 1, "item() needs a single-element tensor, got " + shape_str(shape()));
    return storage().data[0];
}

Tensor Tensor::detach() const {
    return from(shape(), storage().data, false);
}

Tensor Tensor::clone() const {
    return from(shape(), storage().data, requires_grad());
}

TensorStorage& Tensor::storage() {
    DUALVAE_REQUIRE(storage_ != nullptr, "use of an undefined tensor");
    return *storage_;
}

const TensorStorage& Tensor::storage() const {
    DUALVAE_REQUIRE(storage_ != nullptr, "use of an undefined tensor");
    return *storage_;
}

void Tape::record(std::function<void()> backward_fn) {
    if (consumed_) {
        records_.clear();
        consumed_ = false;
    }
    records_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
    DUALVAE_REQUIRE(!consumed_, "backward called twice on the same recording");
    DUALVAE_REQUIRE(loss.defined() && loss.numel() == 1,
                    "backward needs a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
    DUALVAE_REQUIRE(loss.requires_grad(), "loss does not depend on any tracked tensor");
    Tensor seed = loss;
    seed.grad()[0] += real(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    records_.clear();
    consumed_ = true;
}

void Tape::reset() {
    records_.clear();
    consumed_ = false;
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoTapeScope::NoTapeScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoTapeScope::~NoTapeScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
    Tape* tape = Tape::active();
    DUALVAE_REQUIRE(tape != nullptr, "backward without an active tape");
    tape->backward(loss);
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (g_active_tape == nullptr) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t != nullptr && t->defined() && t->requires_grad(); });
}

}  // namespace dualvae
