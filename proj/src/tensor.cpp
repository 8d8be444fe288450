// SPDX-License-Identifier: Apache-2.0

#include "ardu/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace ardu {

std::string Shape::str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
}

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::MaxPool2d: return "maxpool2d";
        case OpKind::Upsample2x: return "upsample_bilinear2x";
        case OpKind::BatchNorm2d: return "batchnorm2d";
        case OpKind::Relu: return "relu";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Add: return "add";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Concat: return "concat_channels";
        case OpKind::Slice: return "slice_channels";
        case OpKind::GlobalAvgPool: return "global_avg_pool";
        case OpKind::BroadcastSpatial: return "broadcast_spatial";
        case OpKind::Sum: return "sum";
        case OpKind::DiceLoss: return "dice_loss";
    }
    return "unknown";
}

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw Error("tensor: negative extent in shape " + shape.str());
    }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(shape, 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    check_shape(shape);
    return from_data(shape, std::vector<float>(shape.numel(), value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    check_shape(shape);
    if (data.size() != shape.numel()) {
        throw Error("tensor: data length " + std::to_string(data.size()) +
                    " does not match shape " + shape.str());
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1, 1, 1, 1}, {value}, requires_grad);
}

detail::TensorImpl& Tensor::checked() const {
    if (!impl_) throw Error("tensor: access to undefined tensor");
    return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }
std::span<float> Tensor::data() { return checked().data; }
std::span<const float> Tensor::data() const { return checked().data; }

float& Tensor::at(int n, int c, int h, int w) {
    auto& t = checked();
    const Shape& s = t.shape;
    return t.data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

float Tensor::at(int n, int c, int h, int w) const {
    const auto& t = checked();
    const Shape& s = t.shape;
    return t.data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

float Tensor::item() const {
    const auto& t = checked();
    if (t.data.size() != 1) throw Error("tensor: item() on non-scalar shape " + t.shape.str());
    return t.data[0];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }
void Tensor::set_requires_grad(bool flag) { checked().requires_grad = flag; }
bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<float> Tensor::grad() { return checked().grad_buffer(); }

std::span<const float> Tensor::grad() const { return checked().grad_buffer(); }

void Tensor::zero_grad() { checked().grad.clear(); }

Tensor Tensor::clone() const {
    const auto& t = checked();
    return from_data(t.shape, t.data, false);
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = checked().shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

OpKind Tensor::op() const {
    const auto& t = checked();
    return t.grad_fn ? t.grad_fn->kind : OpKind::Leaf;
}

void Tensor::backward() const {
    auto& root = checked();
    if (root.data.size() != 1) {
        throw Error("backward: loss must be a scalar, got shape " + root.shape.str());
    }
    if (!root.requires_grad) return;

    // Iterative post-order DFS gives a topological order (inputs before outputs).
    // `order` owns every visited tensor so releasing a node mid-sweep cannot
    // free producers that are still pending.
    std::vector<std::shared_ptr<detail::TensorImpl>> order;
    std::unordered_set<detail::TensorImpl*> visited;
    std::vector<std::pair<std::shared_ptr<detail::TensorImpl>, std::size_t>> stack;
    stack.emplace_back(impl_, 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& top = stack.back();
        const auto& fn = top.first->grad_fn;
        if (fn && top.second < fn->inputs.size()) {
            std::shared_ptr<detail::TensorImpl> child = fn->inputs[top.second++];
            if (child->requires_grad && visited.insert(child.get()).second) {
                stack.emplace_back(std::move(child), 0);
            }
            continue;
        }
        order.push_back(std::move(top.first));
        stack.pop_back();
    }

    root.grad_buffer()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* t = it->get();
        if (!t->grad_fn) continue;
        if (!t->grad.empty()) t->grad_fn->backward(*t);
        // Intermediate results release their graph and gradient once consumed.
        t->grad_fn.reset();
        t->grad.clear();
        t->grad.shrink_to_fit();
    }
}

namespace detail {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_enabled) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<float> data, OpKind kind,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
    Tensor out = Tensor::from_data(shape, std::move(data), false);
    if (!any_requires_grad(inputs)) return out;
    auto node = std::make_shared<Node>();
    node->kind = kind;
    for (const Tensor* t : inputs) {
        if (t->defined()) node->inputs.push_back(t->impl());
    }
    node->backward = std::move(backward);
    out.impl()->grad_fn = std::move(node);
    out.impl()->requires_grad = true;
    return out;
}

}  // namespace detail

}  // namespace ardu
