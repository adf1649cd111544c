#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrt {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Thrown when an operation's preconditions (shapes, axes, extents) are violated.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Thrown when a forward op produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class AutogradError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    bool consumed = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward_fn;

    // Lazily sized accumulator; zero-filled on first use.
    std::vector<double>& grad_buffer();
};

// Every data, grad and scratch buffer the engine allocates goes through here so
// the allocation audit hook sees it.
std::vector<double> allocate(std::size_t n, double fill = 0.0);

}  // namespace detail

// Dense row-major double tensor with an optional gradient accumulator.
//
// Tensors are cheap handles: copying a Tensor shares the underlying storage.
// Ops never mutate their inputs; only leaves are written in place (optimizer,
// initialisers) and only through mutable_data().
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    explicit operator bool() const { return defined(); }

    const Shape& shape() const;
    std::int64_t dim(int axis) const;
    int rank() const;
    std::size_t numel() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double at(std::size_t flat) const { return data()[flat]; }
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    // Reverse-mode sweep from this scalar. Gradients add into every
    // requires_grad leaf; they are never cleared implicitly.
    void backward() const;

    // Same storage values, no history.
    Tensor detach() const;
    Tensor clone() const;

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    static Tensor from_node(std::shared_ptr<detail::Node> node);

private:
    std::shared_ptr<detail::Node> node_;
};

// Disables graph recording for its lifetime (inference, metric evaluation).
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

// Allocation audit: when installed, called with the element count of every
// buffer allocated by the engine on this thread.
using AllocHook = std::function<void(std::size_t elements)>;
class ScopedAllocHook {
public:
    explicit ScopedAllocHook(AllocHook hook);
    ~ScopedAllocHook();
    ScopedAllocHook(const ScopedAllocHook&) = delete;
    ScopedAllocHook& operator=(const ScopedAllocHook&) = delete;

private:
    AllocHook previous_;
};

// FLOP audit: ops that perform matrix products (conv, linear, attention)
// report 2 x multiply-adds here while a counter is active.
class FlopCounter {
public:
    FlopCounter();
    ~FlopCounter();
    FlopCounter(const FlopCounter&) = delete;
    FlopCounter& operator=(const FlopCounter&) = delete;

    std::int64_t total() const { return total_; }
    static void add(std::int64_t flops);

private:
    std::int64_t total_ = 0;
    FlopCounter* previous_;
};

// Builds the result of an op. Parents that require grad are retained together
// with `backward`; otherwise the result is a detached constant.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> parents, detail::BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& parents,
                   detail::BackwardFn backward);

// Throws NonFiniteError naming `op` if any value is NaN/Inf.
void check_finite(std::span<const double> values, const char* op);

}  // namespace hrt
