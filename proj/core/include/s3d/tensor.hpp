#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace s3d {

namespace detail {

struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated during backward for nodes that need it
    bool requires_grad = false;  // user-marked leaf
    bool needs_grad = false;     // participates in some gradient path
    std::string op;              // producing op, empty for leaves
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
};

}  // namespace detail

// Dense 64-bit float tensor handle. Ops record a reverse-mode graph eagerly;
// Tensor::backward() on a scalar fills .grad() on every reachable
// requires_grad leaf. Values are immutable once produced by an op; only leaf
// tensors may be mutated in place (parameter updates).
class Tensor {
public:
    Tensor() = default;

    static Tensor from(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const;
    int64_t numel() const;
    bool requires_grad() const;
    bool needs_grad() const;

    std::span<const double> values() const;
    double value(int64_t i) const { return values()[i]; }
    double item() const;  // scalar tensors only

    // In-place access to a leaf's storage (parameter updates). Throws on
    // graph-produced tensors, whose values downstream nodes already consumed.
    std::span<double> leaf_values();

    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    // Reverse-mode sweep from this scalar. Visits the recorded graph in
    // reverse topological order exactly once and accumulates into leaf grads.
    void backward() const;

    std::shared_ptr<detail::TensorImpl>& impl() { return impl_; }
    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// While alive, ops do not record the graph and results are plain leaves.
// Used for evaluation scans and the detached assistant branch.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

std::string shape_to_string(const std::vector<int>& shape);

}  // namespace s3d
