// SPDX-License-Identifier: Apache-2.0
//
// Dense 4-D float tensor with reverse-mode gradient tracking.

#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ardu {

/// Thrown for every contract violation in the library (shape mismatches,
/// invalid configs, corrupt files). Messages name the offending entity.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// (N, C, H, W) extents, row-major.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

enum class OpKind {
    Leaf,
    Conv2d,
    MaxPool2d,
    Upsample2x,
    BatchNorm2d,
    Relu,
    Sigmoid,
    Add,
    Mul,
    Scale,
    Concat,
    Slice,
    GlobalAvgPool,
    BroadcastSpatial,
    Sum,
    DiceLoss,
};

const char* op_name(OpKind kind);

namespace detail {

struct Node;

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<Node> grad_fn;

    std::vector<float>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), 0.0f);
        return grad;
    }
};

using BackwardFn = std::function<void(const TensorImpl& out)>;

/// Recorded operation. `inputs` keeps producers alive until backward runs.
struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t numel() const { return shape().numel(); }

    std::span<float> data();
    std::span<const float> data() const;
    float& at(int n, int c, int h, int w);
    float at(int n, int c, int h, int w) const;
    float item() const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool has_grad() const;
    std::span<float> grad();
    std::span<const float> grad() const;
    void zero_grad();

    /// Deep copy of the values, no graph history.
    Tensor clone() const;
    /// Shares storage with this tensor but drops graph history and grad tracking.
    Tensor detach() const;

    /// Reverse-mode sweep from a scalar. Leaf grads accumulate; the recorded
    /// graph is released afterwards.
    void backward() const;

    OpKind op() const;
    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    detail::TensorImpl& checked() const;
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// True while graph recording is enabled on this thread.
bool grad_enabled();

/// Disables graph recording for its lifetime (inference, evaluation).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

/// Allocates an op result and, when any input tracks gradients and recording
/// is on, attaches a node with the given backward rule.
Tensor make_result(Shape shape, std::vector<float> data, OpKind kind,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward);

bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

}  // namespace detail

}  // namespace ardu
