// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with optional gradients, and the tape that records
// differentiable primitive applications for reverse-mode differentiation.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dualvae/errors.hpp"
#include "dualvae/real.hpp"

namespace dualvae::inline DUALVAE_ABI {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorStorage {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
};

/// Shared handle to a tensor. Copies alias the same storage; use clone() for
/// a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, real value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<real> values, bool requires_grad = false);
    static Tensor scalar(real value, bool requires_grad = false);

    bool defined() const { return storage_ != nullptr; }
    const Shape& shape() const { return storage().shape; }
    int dim(int axis) const;
    int rank() const { return static_cast<int>(shape().size()); }
    std::size_t numel() const { return storage().data.size(); }

    std::span<real> data() { return storage().data; }
    std::span<const real> data() const { return storage().data; }
    std::vector<real>& values() { return storage().data; }
    const std::vector<real>& values() const { return storage().data; }

    bool has_grad() const { return !storage().grad.empty(); }
    /// Gradient buffer, allocated (zeroed) on first access. The handle is
    /// shared, so a const handle can still accumulate into it.
    std::span<real> grad() const;
    void zero_grad();

    bool requires_grad() const { return storage().requires_grad; }
    void set_requires_grad(bool flag) { storage().requires_grad = flag; }

    real item() const;
    real at(std::size_t flat_index) const { return storage().data.at(flat_index); }

    /// New storage with the same values, no gradient, not tracked.
    Tensor detach() const;
    /// Deep copy preserving requires_grad (but not the gradient).
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

private:
    explicit Tensor(std::shared_ptr<TensorStorage> storage) : storage_(std::move(storage)) {}
    TensorStorage& storage();
    const TensorStorage& storage() const;

    std::shared_ptr<TensorStorage> storage_;
};

/// Ordered record of differentiable primitive applications on one thread.
///
/// Primitives record onto the tape installed by the innermost TapeScope when
/// any input requires a gradient. backward() replays the records in exact
/// reverse order; a second backward() without re-recording throws.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_fn);
    void backward(const Tensor& loss);
    /// Drops all records and re-arms the tape.
    void reset();

    std::size_t size() const { return records_.size(); }
    bool consumed() const { return consumed_; }

    /// Tape installed on the calling thread, or nullptr.
    static Tape* active();

private:
    friend class TapeScope;
    friend class NoTapeScope;
    std::vector<std::function<void()>> records_;
    bool consumed_ = false;
};

/// Installs a tape for the calling thread for the lifetime of the scope.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// Suspends recording for the lifetime of the scope (inference, metrics).
class NoTapeScope {
public:
    NoTapeScope();
    ~NoTapeScope();
    NoTapeScope(const NoTapeScope&) = delete;
    NoTapeScope& operator=(const NoTapeScope&) = delete;

private:
    Tape* previous_;
};

/// Convenience: backward on the active tape.
void backward(const Tensor& loss);

/// True when a tape is active and at least one input requires a gradient.
bool should_record(std::initializer_list<const Tensor*> inputs);

}  // namespace dualvae
