#include "hrt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <new>
#include <sstream>
#include <unordered_set>
#include <utility>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

// Every heap block is 64-byte aligned. Eigen picks its vectorised code path
// and its reduction order from the alignment of the data it is given, so with
// plain malloc alignment two identical forward passes could round differently.
void* operator new(std::size_t n) {
    const std::size_t size = n == 0 ? 64 : (n + 63) & ~std::size_t{63};
    if (void* p = std::aligned_alloc(64, size)) return p;
    throw std::bad_alloc();
}
void* operator new[](std::size_t n) { return ::operator new(n); }
void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }

namespace hrt {

namespace {

thread_local bool g_grad_enabled = true;
thread_local bool g_in_backward = false;
thread_local AllocHook g_alloc_hook;
thread_local FlopCounter* g_flop_counter = nullptr;

#if defined(__GLIBC__)
// Activation buffers are large and short-lived; keeping them on the heap
// instead of fresh mmaps avoids a page-fault storm on every step.
const bool g_malloc_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
}();
#endif

}  // namespace

std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

namespace detail {

std::vector<double> allocate(std::size_t n, double fill) {
    if (g_alloc_hook) g_alloc_hook(n);
    return std::vector<double>(n, fill);
}

std::vector<double>& Node::grad_buffer() {
    if (grad.size() != data.size()) grad = allocate(data.size());
    return grad;
}

}  // namespace detail

void check_finite(std::span<const double> values, const char* op) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + ": non-finite value in output");
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    for (auto e : shape) {
        if (e <= 0) throw ShapeError("Tensor: extents must be positive, got " + shape_str(shape));
    }
    if (static_cast<std::int64_t>(data.size()) != numel_of(shape)) {
        throw ShapeError("Tensor: data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    return Tensor(shape, detail::allocate(static_cast<std::size_t>(numel_of(shape)), value),
                  requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::int64_t Tensor::dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("Tensor::dim: axis out of range");
    return node_->shape[static_cast<std::size_t>(axis)];
}

int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("Tensor::item: tensor is not a scalar " + shape_str(shape()));
    return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (!node_->is_leaf) throw AutogradError("set_requires_grad: only leaves can be toggled");
    node_->requires_grad = value;
}

bool Tensor::is_leaf() const { return node_->is_leaf; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->data.size(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw AutogradError("grad: tensor has no accumulated gradient");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    return Tensor(node_->shape, node_->data, false);
}

Tensor Tensor::clone() const {
    return Tensor(node_->shape, node_->data, node_->requires_grad);
}

void Tensor::backward() const {
    if (g_in_backward) throw AutogradError("backward: reentrant call from inside a backward pass");
    if (numel() != 1) throw AutogradError("backward: loss must be a scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) throw AutogradError("backward: loss does not depend on any trainable leaf");
    if (node_->consumed) throw AutogradError("backward: graph already consumed; rebuild it before calling again");

    // Iterative post-order DFS gives a topological order (parents before children).
    // Owning references keep interior nodes alive while parents are released.
    std::vector<std::shared_ptr<detail::Node>> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
    stack.emplace_back(node_, 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            std::shared_ptr<detail::Node> p = n->parents[next++];
            if (p->requires_grad && !visited.count(p.get())) {
                if (p->consumed) throw AutogradError("backward: graph already consumed; rebuild it before calling again");
                visited.insert(p.get());
                stack.emplace_back(std::move(p), 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    g_in_backward = true;
    try {
        node_->grad_buffer()[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node* n = it->get();
            if (n->is_leaf) continue;
            if (n->backward_fn && n->grad.size() == n->data.size()) n->backward_fn(*n);
            // Interior nodes release their closure and gradient once propagated.
            n->backward_fn = nullptr;
            n->parents.clear();
            n->grad.clear();
            n->grad.shrink_to_fit();
            n->consumed = true;
        }
    } catch (...) {
        g_in_backward = false;
        throw;
    }
    g_in_backward = false;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

ScopedAllocHook::ScopedAllocHook(AllocHook hook)
    : previous_(std::exchange(g_alloc_hook, std::move(hook))) {}

ScopedAllocHook::~ScopedAllocHook() { g_alloc_hook = std::move(previous_); }

FlopCounter::FlopCounter() : previous_(g_flop_counter) { g_flop_counter = this; }
FlopCounter::~FlopCounter() {
    g_flop_counter = previous_;
    if (previous_) previous_->total_ += total_;
}

void FlopCounter::add(std::int64_t flops) {
    if (g_flop_counter) g_flop_counter->total_ += flops;
}

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> parents,
                   detail::BackwardFn backward) {
    return make_result(std::move(shape), std::move(data), std::vector<Tensor>(parents),
                       std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& parents,
                   detail::BackwardFn backward) {
    Tensor out(std::move(shape), std::move(data), false);
    detail::Node* n = out.node();
    n->is_leaf = false;
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs = needs || (p.defined() && p.requires_grad());
    }
    if (needs) {
        n->requires_grad = true;
        for (const auto& p : parents) n->parents.push_back(p.node_ptr());
        n->backward_fn = std::move(backward);
    }
    return out;
}

}  // namespace hrt
