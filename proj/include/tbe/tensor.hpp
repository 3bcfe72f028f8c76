#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tbe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

enum class OpKind {
    conv2d,
    maxpool,
    relu,
    dense,
    concat,
    crop,
    l2norm,
    mean,
    add,
    scale,
    reshape,
    dropout,
    slice,
    loss,
};

const char* op_name(OpKind kind);

class Tensor;
struct TensorImpl;

/// A recorded operation. `backward` receives the gradient of the node's
/// output and accumulates into the gradients of `inputs` that require it.
struct OpNode {
    OpKind kind;
    std::vector<Tensor> inputs;
    std::function<void(std::span<const float> out_grad)> backward;
};

/// Dense row-major float32 tensor with an optional gradient slot.
///
/// Tensor is a handle: copies share storage, matching how autograd graphs
/// reference their inputs. Use clone() for an independent copy. Tensors are
/// treated as immutable once they have been used as an op input; only leaf
/// parameters are mutated, and only by the optimizer between steps.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
    static Tensor scalar(float value) { return Tensor(Shape{1}, value); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const float> data() const;
    std::span<float> mutable_data();
    float item() const;
    float at(std::size_t flat) const { return data()[flat]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const float> grad() const;
    std::span<float> mutable_grad();
    void zero_grad();
    void clear_grad();

    /// Reverse-mode pass seeded with ones (for a scalar) or with `seed`.
    void backward() const;
    void backward(std::span<const float> seed) const;

    const std::shared_ptr<OpNode>& node() const;
    bool is_leaf() const { return node() == nullptr; }

    Tensor detach() const;
    Tensor clone() const;
    Tensor reshaped(Shape shape) const;

    // Internal: attach a producer node to a freshly built output tensor.
    void attach_node(std::shared_ptr<OpNode> node);
    // Internal: gradient buffer allocated on demand.
    std::vector<float>& grad_buffer() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  private:
    std::shared_ptr<TensorImpl> impl_;
};

/// While alive, ops build no graph: outputs never require gradients.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

bool grad_enabled();

/// Throws NonFiniteError naming `what` if any element is NaN/Inf.
void check_finite(std::span<const float> values, const std::string& what);

}  // namespace tbe
