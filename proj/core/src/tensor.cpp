#include "s3d/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace s3d {

namespace {
thread_local int g_no_grad_depth = 0;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension in " + shape_to_string(shape));
        n *= d;
    }
    if (n != static_cast<int64_t>(values.size()))
        throw std::invalid_argument("Tensor: " + std::to_string(values.size()) + " values for shape " +
                                    shape_to_string(shape));
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    impl->requires_grad = requires_grad;
    impl->needs_grad = requires_grad;
    Tensor t;
    t.impl() = std::move(impl);
    return t;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const std::vector<int>& Tensor::shape() const {
    if (!impl_) throw std::logic_error("Tensor: empty tensor");
    return impl_->shape;
}

int64_t Tensor::numel() const {
    if (!impl_) throw std::logic_error("Tensor: empty tensor");
    return impl_->numel();
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
bool Tensor::needs_grad() const { return impl_ && impl_->needs_grad; }

std::span<const double> Tensor::values() const {
    if (!impl_) throw std::logic_error("Tensor: empty tensor");
    return impl_->values;
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor has shape " + shape_to_string(shape()));
    return impl_->values[0];
}

std::span<double> Tensor::leaf_values() {
    if (!impl_) throw std::logic_error("Tensor: empty tensor");
    if (!impl_->parents.empty())
        throw std::logic_error("Tensor::leaf_values: tensor is an op output (" + impl_->op + "), not a leaf");
    return impl_->values;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!impl_) throw std::logic_error("Tensor: empty tensor");
    if (impl_->grad.empty())
        throw std::logic_error("Tensor::grad: no gradient accumulated (requires_grad=" +
                               std::string(impl_->requires_grad ? "true" : "false") + ")");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_) throw std::logic_error("Tensor: empty tensor");
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::backward() const {
    if (!impl_) throw std::logic_error("backward: empty tensor");
    if (impl_->numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_to_string(impl_->shape));
    if (!impl_->needs_grad)
        throw std::logic_error("backward: no gradient-requiring leaf reaches this tensor (no graph was recorded)");

    // Iterative post-order DFS over needs_grad parents gives a topological
    // order; walking it backwards visits every node exactly once.
    std::vector<detail::TensorImpl*> topo;
    std::unordered_set<detail::TensorImpl*> visited;
    struct Frame {
        detail::TensorImpl* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({impl_.get(), 0});
    visited.insert(impl_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::TensorImpl* p = f.node->parents[f.next_parent++].get();
            if (p->needs_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(f.node);
            stack.pop_back();
        }
    }

    for (auto* node : topo) {
        if (node->grad.empty()) node->grad.assign(node->numel(), 0.0);
    }
    impl_->grad[0] += 1.0;

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        detail::TensorImpl* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
}

}  // namespace s3d
