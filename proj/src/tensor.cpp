#include "tbe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "tbe/errors.hpp"

namespace tbe {

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty == no gradient yet
    bool requires_grad = false;
    std::shared_ptr<OpNode> node;
};

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::conv2d: return "conv2d";
        case OpKind::maxpool: return "maxpool";
        case OpKind::relu: return "relu";
        case OpKind::dense: return "dense";
        case OpKind::concat: return "concat";
        case OpKind::crop: return "crop";
        case OpKind::l2norm: return "l2norm";
        case OpKind::mean: return "mean";
        case OpKind::add: return "add";
        case OpKind::scale: return "scale";
        case OpKind::reshape: return "reshape";
        case OpKind::dropout: return "dropout";
        case OpKind::slice: return "slice";
        case OpKind::loss: return "loss";
    }
    return "?";
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty()) {
        throw DimensionError("tensor shape must have rank >= 1");
    }
    for (std::size_t d : shape) {
        if (d == 0) {
            throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
        }
    }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<TensorImpl>()) {
    validate_shape(shape);
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : impl_(std::make_shared<TensorImpl>()) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_string(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
}

const Shape& Tensor::shape() const {
    static const Shape empty;
    return impl_ ? impl_->shape : empty;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_string(shape()));
    }
    return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const float> Tensor::data() const { return impl_->data; }

std::span<float> Tensor::mutable_data() { return impl_->data; }

float Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    }
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const { return impl_->grad; }

std::span<float> Tensor::mutable_grad() { return grad_buffer(); }

std::vector<float>& Tensor::grad_buffer() const {
    if (impl_->grad.empty()) {
        impl_->grad.assign(impl_->data.size(), 0.0f);
    }
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_ && !impl_->grad.empty()) {
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
    }
}

void Tensor::clear_grad() {
    if (impl_) {
        impl_->grad.clear();
        impl_->grad.shrink_to_fit();
    }
}

const std::shared_ptr<OpNode>& Tensor::node() const {
    static const std::shared_ptr<OpNode> none;
    return impl_ ? impl_->node : none;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void Tensor::attach_node(std::shared_ptr<OpNode> node) {
    if (!g_grad_enabled) {
        return;
    }
    impl_->node = std::move(node);
    impl_->requires_grad = true;
}

Tensor Tensor::detach() const {
    Tensor out(impl_->shape, impl_->data);
    return out;
}

Tensor Tensor::clone() const {
    Tensor out = detach();
    out.impl_->requires_grad = impl_->requires_grad && is_leaf();
    return out;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw DimensionError("cannot reshape " + shape_string(this->shape()) + " to " +
                             shape_string(shape));
    }
    Tensor out(std::move(shape), impl_->data);
    if (requires_grad()) {
        auto node = std::make_shared<OpNode>();
        node->kind = OpKind::reshape;
        node->inputs = {*this};
        Tensor in = *this;
        node->backward = [in](std::span<const float> g) {
            auto& dst = in.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                dst[i] += g[i];
            }
        };
        out.attach_node(std::move(node));
    }
    return out;
}

void Tensor::backward() const {
    std::vector<float> seed(numel(), 1.0f);
    backward(seed);
}

void Tensor::backward(std::span<const float> seed) const {
    if (seed.size() != numel()) {
        throw DimensionError("backward seed has " + std::to_string(seed.size()) +
                             " values for tensor of shape " + shape_string(shape()));
    }
    // Iterative post-order DFS gives a topological order; each node is
    // visited exactly once even when shared by several consumers.
    std::vector<Tensor> keep;
    std::unordered_set<const TensorImpl*> seen;
    struct Frame {
        Tensor t;
        std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({*this, 0});
    seen.insert(impl_.get());
    while (!stack.empty()) {
        Frame& top = stack.back();
        const auto& node = top.t.impl_->node;
        if (node && top.next < node->inputs.size()) {
            const Tensor& child = node->inputs[top.next++];
            if (child.impl_->node && seen.insert(child.impl_.get()).second) {
                stack.push_back({child, 0});
            }
            continue;
        }
        keep.push_back(top.t);
        stack.pop_back();
    }
    // Non-leaf gradients are per-pass scratch; leaves accumulate.
    for (auto& t : keep) {
        if (t.impl_->node) {
            std::fill(t.impl_->grad.begin(), t.impl_->grad.end(), 0.0f);
        }
    }
    auto& root = grad_buffer();
    for (std::size_t i = 0; i < seed.size(); ++i) {
        root[i] += seed[i];
    }
    for (auto it = keep.rbegin(); it != keep.rend(); ++it) {
        const auto& node = it->impl_->node;
        if (!node || it->impl_->grad.empty()) {
            continue;
        }
        node->backward(it->impl_->grad);
    }
}

void check_finite(std::span<const float> values, const std::string& what) {
    for (float v : values) {
        if (!std::isfinite(v)) {
            throw NonFiniteError("non-finite value in " + what);
        }
    }
}

}  // namespace tbe
