#pragma once

// Dense double-precision tensors with reverse-mode differentiation.
//
// Define-by-run: every op executed while a Tape is active appends one step to
// that tape; Tape::backward replays the steps in reverse, so each recorded op
// is visited exactly once. A tensor and the tape it was recorded on belong to
// a single thread for the duration of one forward/backward pass; independent
// passes on other threads use their own tapes.
//
// The op set is intentionally small: matrix products, the pointwise functions
// a recurrent cell and an attention stack need, masked softmax, and a handful
// of structural ops (row/column selection, stacking, concatenation). No views,
// no general broadcasting beyond scalar-with-tensor.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kt/errors.hpp"
#include "kt/rng.hpp"

namespace kt {

class Tensor;
class Tape;

using BoolMask = std::vector<std::uint8_t>;

namespace detail {

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;     // persistent, accumulates across backward calls
    std::vector<double> adjoint;  // scratch for one backward sweep
    bool requires_grad = false;
    std::uint64_t tape_mark = 0;

    std::size_t size() const { return data.size(); }
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

}  // namespace detail

// =====================================================================
//  Tensor
// =====================================================================

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        return filled(std::move(shape), 0.0, requires_grad);
    }

    static Tensor filled(std::vector<std::size_t> shape, double value, bool requires_grad = false) {
        check_shape(shape);
        auto node = std::make_shared<detail::TensorNode>();
        node->data.assign(detail::shape_numel(shape), value);
        node->shape = std::move(shape);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    static Tensor from(std::vector<std::size_t> shape, std::vector<double> values,
                       bool requires_grad = false) {
        check_shape(shape);
        if (detail::shape_numel(shape) != values.size()) {
            fail(ErrorKind::dimension,
                 "value count " + std::to_string(values.size()) + " does not fill shape " +
                     detail::shape_str(shape));
        }
        auto node = std::make_shared<detail::TensorNode>();
        node->shape = std::move(shape);
        node->data = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor one_hot(std::size_t width, std::size_t hot) {
        if (hot >= width) {
            fail(ErrorKind::index, "one_hot index " + std::to_string(hot) + " out of width " +
                                       std::to_string(width));
        }
        Tensor t = zeros({width});
        t.node_->data[hot] = 1.0;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return require().shape; }
    std::size_t rank() const { return require().shape.size(); }
    std::size_t size() const { return require().data.size(); }
    bool is_scalar() const { return size() == 1; }
    bool is_vector() const { return rank() == 1; }
    bool is_matrix() const { return rank() == 2; }

    std::size_t rows() const {
        const auto& s = require().shape;
        return s.empty() ? 0 : s[0];
    }
    std::size_t cols() const {
        const auto& s = require().shape;
        if (s.size() != 2) fail(ErrorKind::contract, "cols() on non-matrix " + detail::shape_str(s));
        return s[1];
    }

    double value() const {
        if (size() != 1) {
            fail(ErrorKind::contract, "value() on non-scalar " + detail::shape_str(shape()));
        }
        return require().data[0];
    }

    double at(std::size_t i) const { return require().data.at(i); }
    double at(std::size_t r, std::size_t c) const { return require().data.at(r * cols() + c); }

    std::span<double> data() { return {require().data.data(), require().data.size()}; }
    std::span<const double> data() const { return {require().data.data(), require().data.size()}; }

    // Allocated (zeroed) on first access.
    std::span<double> grad() {
        auto& n = require();
        if (n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0);
        return {n.grad.data(), n.grad.size()};
    }

    bool has_grad() const { return defined() && !node_->grad.empty(); }
    void zero_grad() {
        auto& n = require();
        n.grad.assign(n.data.size(), 0.0);
    }

    bool requires_grad() const { return defined() && node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        require().requires_grad = on;
        return *this;
    }

    // Fresh leaf with the same values; no grad, no recording history.
    Tensor detached_copy() const {
        const auto& n = require();
        auto node = std::make_shared<detail::TensorNode>();
        node->shape = n.shape;
        node->data = n.data;
        return Tensor(std::move(node));
    }

    const std::shared_ptr<detail::TensorNode>& node() const {
        require();
        return node_;
    }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

    static void check_shape(const std::vector<std::size_t>& shape) {
        if (shape.empty()) fail(ErrorKind::dimension, "empty shape");
        for (std::size_t e : shape) {
            if (e == 0) fail(ErrorKind::dimension, "zero extent in shape " + detail::shape_str(shape));
        }
    }

    detail::TensorNode& require() const {
        if (!node_) fail(ErrorKind::contract, "operation on an undefined tensor");
        return *node_;
    }

    std::shared_ptr<detail::TensorNode> node_;

    friend class Tape;
    friend Tensor make_result(std::vector<std::size_t>, std::vector<double>);
};

inline Tensor make_result(std::vector<std::size_t> shape, std::vector<double> data) {
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    return Tensor(std::move(node));
}

// =====================================================================
//  Tape (the computation record)
// =====================================================================

class Tape {
public:
    Tape() : serial_(++counter()) { stack().push_back(this); }
    ~Tape() { stack().pop_back(); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() {
        if (paused() > 0) return nullptr;
        auto& s = stack();
        return s.empty() ? nullptr : s.back();
    }

    void record(std::function<void()> back,
                std::initializer_list<std::shared_ptr<detail::TensorNode>> nodes) {
        for (const auto& n : nodes) register_node(n);
        steps_.push_back(std::move(back));
    }

    void track(const std::shared_ptr<detail::TensorNode>& n) { register_node(n); }

    // Propagates adjoints from `loss` back through every recorded step (each
    // visited once, in reverse execution order), then accumulates them into
    // the persistent grad of every requires_grad tensor. Calling twice
    // without zero_grad doubles the grads.
    void backward(const Tensor& loss) {
        if (!loss.defined() || loss.size() != 1) {
            fail(ErrorKind::contract, "backward expects a scalar loss");
        }
        register_node(loss.node());
        for (auto& n : nodes_) n->adjoint.assign(n->size(), 0.0);
        loss.node()->adjoint[0] = 1.0;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
        for (auto& n : nodes_) {
            if (!n->requires_grad) continue;
            if (n->grad.size() != n->size()) n->grad.assign(n->size(), 0.0);
            for (std::size_t i = 0; i < n->size(); ++i) n->grad[i] += n->adjoint[i];
        }
    }

    std::size_t op_count() const { return steps_.size(); }

private:
    friend class PauseRecording;

    void register_node(const std::shared_ptr<detail::TensorNode>& n) {
        if (n->tape_mark != serial_) {
            n->tape_mark = serial_;
            nodes_.push_back(n);
        }
    }

    static std::vector<Tape*>& stack() {
        thread_local std::vector<Tape*> s;
        return s;
    }
    static int& paused() {
        thread_local int p = 0;
        return p;
    }
    static std::uint64_t& counter() {
        thread_local std::uint64_t c = 0;
        return c;
    }

    std::uint64_t serial_;
    std::vector<std::function<void()>> steps_;
    std::vector<std::shared_ptr<detail::TensorNode>> nodes_;
};

// Suspends recording while alive (used for finite-difference probes).
class PauseRecording {
public:
    PauseRecording() { ++Tape::paused(); }
    ~PauseRecording() { --Tape::paused(); }
    PauseRecording(const PauseRecording&) = delete;
    PauseRecording& operator=(const PauseRecording&) = delete;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            fail(ErrorKind::numeric, std::string(op) + " produced a non-finite value");
        }
    }
}

inline bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

// Marks `out` as grad-carrying and appends the step.
inline void record_step(Tensor& out, std::function<void()> back,
                        std::initializer_list<std::shared_ptr<TensorNode>> nodes) {
    out.set_requires_grad(true);
    Tape::active()->record(std::move(back), nodes);
}

}  // namespace detail

// =====================================================================
//  Primitive ops
// =====================================================================

// a [m x k] times b ([k x n] or length-k vector). Backward accumulates
// a.grad += g b^T and b.grad += a^T g.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (!a.is_matrix()) {
        fail(ErrorKind::dimension, "matmul lhs must be a matrix, got " + detail::shape_str(a.shape()));
    }
    if (!b.is_matrix() && !b.is_vector()) {
        fail(ErrorKind::dimension, "matmul rhs must be a matrix or vector, got " +
                                       detail::shape_str(b.shape()));
    }
    const std::size_t m = a.rows();
    const std::size_t k = a.cols();
    const bool vec_rhs = b.is_vector();
    const std::size_t bk = vec_rhs ? b.size() : b.rows();
    const std::size_t n = vec_rhs ? 1 : b.cols();
    if (k != bk) {
        fail(ErrorKind::dimension, "matmul inner extents disagree: " + detail::shape_str(a.shape()) +
                                       " vs " + detail::shape_str(b.shape()));
    }

    std::vector<double> out(m * n, 0.0);
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            if (av == 0.0) continue;
            const double* brow = &bd[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    detail::check_finite(out, "matmul");
    Tensor result = vec_rhs ? make_result({m}, std::move(out))
                            : make_result({m, n}, std::move(out));

    if (detail::should_record({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = result.node();
        detail::record_step(
            result,
            [an, bn, on, m, k, n]() {
                const auto& g = on->adjoint;
                if (an->requires_grad) {
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t p = 0; p < k; ++p) {
                            double acc = 0.0;
                            for (std::size_t j = 0; j < n; ++j) {
                                acc += g[i * n + j] * bn->data[p * n + j];
                            }
                            an->adjoint[i * k + p] += acc;
                        }
                    }
                }
                if (bn->requires_grad) {
                    for (std::size_t p = 0; p < k; ++p) {
                        for (std::size_t j = 0; j < n; ++j) {
                            double acc = 0.0;
                            for (std::size_t i = 0; i < m; ++i) {
                                acc += an->data[i * k + p] * g[i * n + j];
                            }
                            bn->adjoint[p * n + j] += acc;
                        }
                    }
                }
            },
            {an, bn, on});
    }
    return result;
}

inline Tensor transpose(const Tensor& a) {
    if (!a.is_matrix()) {
        fail(ErrorKind::dimension, "transpose expects a matrix, got " + detail::shape_str(a.shape()));
    }
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(n * m);
    const auto ad = a.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
    }
    Tensor result = make_result({n, m}, std::move(out));
    if (detail::should_record({&a})) {
        auto an = a.node(), on = result.node();
        detail::record_step(
            result,
            [an, on, m, n]() {
                if (!an->requires_grad) return;
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        an->adjoint[i * n + j] += on->adjoint[j * m + i];
                    }
                }
            },
            {an, on});
    }
    return result;
}

namespace detail {

enum class BinOp { add, sub, mul };

inline Tensor binary_ew(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    const bool a_scalar = a.is_scalar();
    const bool b_scalar = b.is_scalar();
    const bool same = a.shape() == b.shape();
    if (!same && !a_scalar && !b_scalar) {
        fail(ErrorKind::dimension, std::string(name) + " shapes incompatible: " +
                                       shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const Tensor& big = (!a_scalar || same) ? a : b;
    const std::size_t n = big.size();
    std::vector<double> out(n);
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a_scalar && !same ? ad[0] : ad[i];
        const double y = b_scalar && !same ? bd[0] : bd[i];
        switch (op) {
            case BinOp::add: out[i] = x + y; break;
            case BinOp::sub: out[i] = x - y; break;
            case BinOp::mul: out[i] = x * y; break;
        }
    }
    check_finite(out, name);
    Tensor result = make_result(big.shape(), std::move(out));

    if (should_record({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = result.node();
        const bool broadcast_a = a_scalar && !same;
        const bool broadcast_b = b_scalar && !same;
        record_step(
            result,
            [an, bn, on, op, broadcast_a, broadcast_b, n]() {
                const auto& g = on->adjoint;
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = broadcast_a ? an->data[0] : an->data[i];
                    const double y = broadcast_b ? bn->data[0] : bn->data[i];
                    double da = 0.0, db = 0.0;
                    switch (op) {
                        case BinOp::add: da = g[i]; db = g[i]; break;
                        case BinOp::sub: da = g[i]; db = -g[i]; break;
                        case BinOp::mul: da = g[i] * y; db = g[i] * x; break;
                    }
                    if (an->requires_grad) an->adjoint[broadcast_a ? 0 : i] += da;
                    if (bn->requires_grad) bn->adjoint[broadcast_b ? 0 : i] += db;
                }
            },
            {an, bn, on});
    }
    return result;
}

enum class UnOp { tanh_fn, sigmoid_fn, exp_fn, log_fn, softplus_fn };

inline double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor unary_ew(const Tensor& a, UnOp op, const char* name) {
    const std::size_t n = a.size();
    std::vector<double> out(n);
    const auto ad = a.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = ad[i];
        switch (op) {
            case UnOp::tanh_fn: out[i] = std::tanh(x); break;
            case UnOp::sigmoid_fn: out[i] = stable_sigmoid(x); break;
            case UnOp::exp_fn: out[i] = std::exp(x); break;
            case UnOp::log_fn:
                if (x <= 0.0) fail(ErrorKind::numeric, "log of a non-positive value");
                out[i] = std::log(x);
                break;
            case UnOp::softplus_fn:
                out[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
                break;
        }
    }
    check_finite(out, name);
    Tensor result = make_result(a.shape(), std::move(out));

    if (should_record({&a})) {
        auto an = a.node(), on = result.node();
        record_step(
            result,
            [an, on, op, n]() {
                if (!an->requires_grad) return;
                for (std::size_t i = 0; i < n; ++i) {
                    const double y = on->data[i];
                    double d = 0.0;
                    switch (op) {
                        case UnOp::tanh_fn: d = 1.0 - y * y; break;
                        case UnOp::sigmoid_fn: d = y * (1.0 - y); break;
                        case UnOp::exp_fn: d = y; break;
                        case UnOp::log_fn: d = 1.0 / an->data[i]; break;
                        case UnOp::softplus_fn: d = stable_sigmoid(an->data[i]); break;
                    }
                    an->adjoint[i] += on->adjoint[i] * d;
                }
            },
            {an, on});
    }
    return result;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_ew(a, b, detail::BinOp::add, "add");
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_ew(a, b, detail::BinOp::sub, "sub");
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_ew(a, b, detail::BinOp::mul, "mul");
}

inline Tensor tanh(const Tensor& a) { return detail::unary_ew(a, detail::UnOp::tanh_fn, "tanh"); }
inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_ew(a, detail::UnOp::sigmoid_fn, "sigmoid");
}
inline Tensor exp(const Tensor& a) { return detail::unary_ew(a, detail::UnOp::exp_fn, "exp"); }
inline Tensor log(const Tensor& a) { return detail::unary_ew(a, detail::UnOp::log_fn, "log"); }
inline Tensor softplus(const Tensor& a) {
    return detail::unary_ew(a, detail::UnOp::softplus_fn, "softplus");
}

// c * x with a literal constant (no node for the constant).
inline Tensor scale(const Tensor& a, double c) {
    const std::size_t n = a.size();
    std::vector<double> out(n);
    const auto ad = a.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = c * ad[i];
    detail::check_finite(out, "scale");
    Tensor result = make_result(a.shape(), std::move(out));
    if (detail::should_record({&a})) {
        auto an = a.node(), on = result.node();
        detail::record_step(
            result,
            [an, on, c, n]() {
                if (!an->requires_grad) return;
                for (std::size_t i = 0; i < n; ++i) an->adjoint[i] += c * on->adjoint[i];
            },
            {an, on});
    }
    return result;
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// min(max(x, lo), hi); zero derivative where the clamp binds.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) fail(ErrorKind::contract, "clamp bounds out of order");
    const std::size_t n = a.size();
    std::vector<double> out(n);
    const auto ad = a.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = std::min(std::max(ad[i], lo), hi);
    Tensor result = make_result(a.shape(), std::move(out));
    if (detail::should_record({&a})) {
        auto an = a.node(), on = result.node();
        detail::record_step(
            result,
            [an, on, lo, hi, n]() {
                if (!an->requires_grad) return;
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = an->data[i];
                    if (x > lo && x < hi) an->adjoint[i] += on->adjoint[i];
                }
            },
            {an, on});
    }
    return result;
}

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    if (!std::isfinite(acc)) fail(ErrorKind::numeric, "sum produced a non-finite value");
    Tensor result = make_result({1}, {acc});
    if (detail::should_record({&a})) {
        auto an = a.node(), on = result.node();
        detail::record_step(
            result,
            [an, on]() {
                if (!an->requires_grad) return;
                const double g = on->adjoint[0];
                for (std::size_t i = 0; i < an->size(); ++i) an->adjoint[i] += g;
            },
            {an, on});
    }
    return result;
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Tensor dot(const Tensor& a, const Tensor& b) {
    if (!a.is_vector() || !b.is_vector() || a.size() != b.size()) {
        fail(ErrorKind::dimension, "dot expects equal-length vectors: " +
                                       detail::shape_str(a.shape()) + " vs " +
                                       detail::shape_str(b.shape()));
    }
    double acc = 0.0;
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) acc += ad[i] * bd[i];
    if (!std::isfinite(acc)) fail(ErrorKind::numeric, "dot produced a non-finite value");
    Tensor result = make_result({1}, {acc});
    if (detail::should_record({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = result.node();
        detail::record_step(
            result,
            [an, bn, on]() {
                const double g = on->adjoint[0];
                for (std::size_t i = 0; i < an->size(); ++i) {
                    if (an->requires_grad) an->adjoint[i] += g * bn->data[i];
                    if (bn->requires_grad) bn->adjoint[i] += g * an->data[i];
                }
            },
            {an, bn, on});
    }
    return result;
}

inline Tensor row(const Tensor& a, std::size_t r) {
    if (!a.is_matrix()) fail(ErrorKind::dimension, "row expects a matrix");
    if (r >= a.rows()) {
        fail(ErrorKind::index,
             "row " + std::to_string(r) + " out of range for " + detail::shape_str(a.shape()));
    }
    const std::size_t n = a.cols();
    std::vector<double> out(a.data().begin() + r * n, a.data().begin() + (r + 1) * n);
    Tensor result = make_result({n}, std::move(out));
    if (detail::should_record({&a})) {
        auto an = a.node(), on = result.node();
        detail::record_step(
            result,
            [an, on, r, n]() {
                if (!an->requires_grad) return;
                for (std::size_t j = 0; j < n; ++j) an->adjoint[r * n + j] += on->adjoint[j];
            },
            {an, on});
    }
    return result;
}

inline Tensor col(const Tensor& a, std::size_t c) {
    if (!a.is_matrix()) fail(ErrorKind::dimension, "col expects a matrix");
    if (c >= a.cols()) {
        fail(ErrorKind::index,
             "column " + std::to_string(c) + " out of range for " + detail::shape_str(a.shape()));
    }
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m);
    const auto ad = a.data();
    for (std::size_t i = 0; i < m; ++i) out[i] = ad[i * n + c];
    Tensor result = make_result({m}, std::move(out));
    if (detail::should_record({&a})) {
        auto an = a.node(), on = result.node();
        detail::record_step(
            result,
            [an, on, c, m, n]() {
                if (!an->requires_grad) return;
                for (std::size_t i = 0; i < m; ++i) an->adjoint[i * n + c] += on->adjoint[i];
            },
            {an, on});
    }
    return result;
}

// Rows [r0, r1) of a matrix as a new matrix.
inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    if (!a.is_matrix()) fail(ErrorKind::dimension, "slice_rows expects a matrix");
    if (r0 >= r1 || r1 > a.rows()) {
        fail(ErrorKind::index, "row range [" + std::to_string(r0) + "," + std::to_string(r1) +
                                   ") invalid for " + detail::shape_str(a.shape()));
    }
    const std::size_t n = a.cols();
    std::vector<double> out(a.data().begin() + r0 * n, a.data().begin() + r1 * n);
    Tensor result = make_result({r1 - r0, n}, std::move(out));
    if (detail::should_record({&a})) {
        auto an = a.node(), on = result.node();
        detail::record_step(
            result,
            [an, on, r0, n]() {
                if (!an->requires_grad) return;
                for (std::size_t i = 0; i < on->size(); ++i) an->adjoint[r0 * n + i] += on->adjoint[i];
            },
            {an, on});
    }
    return result;
}

inline Tensor pick(const Tensor& v, std::size_t i) {
    if (!v.is_vector()) fail(ErrorKind::dimension, "pick expects a vector");
    if (i >= v.size()) {
        fail(ErrorKind::index,
             "index " + std::to_string(i) + " out of range for " + detail::shape_str(v.shape()));
    }
    Tensor result = make_result({1}, {v.at(i)});
    if (detail::should_record({&v})) {
        auto vn = v.node(), on = result.node();
        detail::record_step(
            result,
            [vn, on, i]() {
                if (vn->requires_grad) vn->adjoint[i] += on->adjoint[0];
            },
            {vn, on});
    }
    return result;
}

inline Tensor concat(const Tensor& a, const Tensor& b) {
    if (!a.is_vector() || !b.is_vector()) fail(ErrorKind::dimension, "concat expects vectors");
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    Tensor result = make_result({a.size() + b.size()}, std::move(out));
    if (detail::should_record({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = result.node();
        const std::size_t na = a.size();
        detail::record_step(
            result,
            [an, bn, on, na]() {
                if (an->requires_grad) {
                    for (std::size_t i = 0; i < na; ++i) an->adjoint[i] += on->adjoint[i];
                }
                if (bn->requires_grad) {
                    for (std::size_t i = 0; i < bn->size(); ++i) {
                        bn->adjoint[i] += on->adjoint[na + i];
                    }
                }
            },
            {an, bn, on});
    }
    return result;
}

// Stacks equal-length vectors into a matrix, one row each.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) fail(ErrorKind::dimension, "stack_rows on an empty list");
    const std::size_t n = rows[0].size();
    for (const Tensor& r : rows) {
        if (!r.is_vector() || r.size() != n) {
            fail(ErrorKind::dimension, "stack_rows expects equal-length vectors");
        }
    }
    const std::size_t m = rows.size();
    std::vector<double> out;
    out.reserve(m * n);
    for (const Tensor& r : rows) out.insert(out.end(), r.data().begin(), r.data().end());
    Tensor result = make_result({m, n}, std::move(out));

    bool any_grad = false;
    for (const Tensor& r : rows) any_grad = any_grad || r.requires_grad();
    if (Tape::active() && any_grad) {
        std::vector<std::shared_ptr<detail::TensorNode>> nodes;
        nodes.reserve(m);
        for (const Tensor& r : rows) nodes.push_back(r.node());
        auto on = result.node();
        result.set_requires_grad(true);
        Tape* t = Tape::active();
        for (const auto& nptr : nodes) t->track(nptr);
        t->record(
            [nodes, on, n]() {
                for (std::size_t i = 0; i < nodes.size(); ++i) {
                    if (!nodes[i]->requires_grad) continue;
                    for (std::size_t j = 0; j < n; ++j) {
                        nodes[i]->adjoint[j] += on->adjoint[i * n + j];
                    }
                }
            },
            {on});
    }
    return result;
}

// Stacks matrices with equal row counts side by side.
inline Tensor concat_cols(const std::vector<Tensor>& mats) {
    if (mats.empty()) fail(ErrorKind::dimension, "concat_cols on an empty list");
    const std::size_t m = mats[0].rows();
    std::size_t total = 0;
    for (const Tensor& t : mats) {
        if (!t.is_matrix() || t.rows() != m) {
            fail(ErrorKind::dimension, "concat_cols expects matrices with equal row counts");
        }
        total += t.cols();
    }
    std::vector<double> out(m * total);
    std::size_t off = 0;
    for (const Tensor& t : mats) {
        const std::size_t n = t.cols();
        const auto td = t.data();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) out[i * total + off + j] = td[i * n + j];
        }
        off += n;
    }
    Tensor result = make_result({m, total}, std::move(out));

    bool any_grad = false;
    for (const Tensor& t : mats) any_grad = any_grad || t.requires_grad();
    if (Tape::active() && any_grad) {
        std::vector<std::shared_ptr<detail::TensorNode>> nodes;
        std::vector<std::size_t> widths;
        for (const Tensor& t : mats) {
            nodes.push_back(t.node());
            widths.push_back(t.cols());
        }
        auto on = result.node();
        result.set_requires_grad(true);
        Tape* t = Tape::active();
        for (const auto& nptr : nodes) t->track(nptr);
        t->record(
            [nodes, widths, on, m, total]() {
                std::size_t off = 0;
                for (std::size_t b = 0; b < nodes.size(); ++b) {
                    const std::size_t n = widths[b];
                    if (nodes[b]->requires_grad) {
                        for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < n; ++j) {
                                nodes[b]->adjoint[i * n + j] += on->adjoint[i * total + off + j];
                            }
                        }
                    }
                    off += n;
                }
            },
            {on});
    }
    return result;
}

// mat[i,j] + v[j] for every row i.
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    if (!m.is_matrix() || !v.is_vector() || v.size() != m.cols()) {
        fail(ErrorKind::dimension, "add_rowvec shapes incompatible: " +
                                       detail::shape_str(m.shape()) + " vs " +
                                       detail::shape_str(v.shape()));
    }
    const std::size_t rows = m.rows(), n = m.cols();
    std::vector<double> out(rows * n);
    const auto md = m.data();
    const auto vd = v.data();
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = md[i * n + j] + vd[j];
    }
    detail::check_finite(out, "add_rowvec");
    Tensor result = make_result({rows, n}, std::move(out));
    if (detail::should_record({&m, &v})) {
        auto mn = m.node(), vn = v.node(), on = result.node();
        detail::record_step(
            result,
            [mn, vn, on, rows, n]() {
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        const double g = on->adjoint[i * n + j];
                        if (mn->requires_grad) mn->adjoint[i * n + j] += g;
                        if (vn->requires_grad) vn->adjoint[j] += g;
                    }
                }
            },
            {mn, vn, on});
    }
    return result;
}

// Softmax over the positions where mask is true; exact zeros elsewhere.
// Max-subtraction keeps the exponentials in range.
inline Tensor masked_softmax(const Tensor& logits, const BoolMask& mask) {
    if (!logits.is_vector()) fail(ErrorKind::dimension, "masked_softmax expects a vector");
    if (mask.size() != logits.size()) {
        fail(ErrorKind::dimension, "mask length " + std::to_string(mask.size()) +
                                       " does not match logits " +
                                       detail::shape_str(logits.shape()));
    }
    const std::size_t n = logits.size();
    double hi = -std::numeric_limits<double>::infinity();
    bool any = false;
    const auto ld = logits.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i]) {
            any = true;
            hi = std::max(hi, ld[i]);
        }
    }
    if (!any) fail(ErrorKind::empty_support, "masked_softmax over an all-masked input");

    std::vector<double> out(n, 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i]) {
            out[i] = std::exp(ld[i] - hi);
            z += out[i];
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i]) out[i] /= z;
    }
    detail::check_finite(out, "masked_softmax");
    Tensor result = make_result({n}, std::move(out));
    if (detail::should_record({&logits})) {
        auto ln = logits.node(), on = result.node();
        BoolMask m = mask;
        detail::record_step(
            result,
            [ln, on, m, n]() {
                if (!ln->requires_grad) return;
                double inner = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (m[i]) inner += on->adjoint[i] * on->data[i];
                }
                for (std::size_t i = 0; i < n; ++i) {
                    if (m[i]) ln->adjoint[i] += on->data[i] * (on->adjoint[i] - inner);
                }
            },
            {ln, on});
    }
    return result;
}

// Inverted dropout: keeps with probability 1-rate and rescales, so the
// expectation is the identity. rate 0 is a true no-op.
inline Tensor dropout(const Tensor& a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) fail(ErrorKind::config, "dropout rate must be in [0,1)");
    if (rate == 0.0) return a;
    const std::size_t n = a.size();
    std::vector<double> mask(n);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < n; ++i) mask[i] = rng.bernoulli(1.0 - rate) ? keep_scale : 0.0;
    std::vector<double> out(n);
    const auto ad = a.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] * mask[i];
    Tensor result = make_result(a.shape(), std::move(out));
    if (detail::should_record({&a})) {
        auto an = a.node(), on = result.node();
        detail::record_step(
            result,
            [an, on, mask, n]() {
                if (!an->requires_grad) return;
                for (std::size_t i = 0; i < n; ++i) an->adjoint[i] += on->adjoint[i] * mask[i];
            },
            {an, on});
    }
    return result;
}

// =====================================================================
//  Gradient checking
// =====================================================================

// Max over coordinates of |analytic - central difference| / (|cd| + 1e-8)
// for a scalar-valued f evaluated at `point`.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                         double h = 1e-5) {
    Tensor x = point.detached_copy();
    x.set_requires_grad(true);
    std::vector<double> analytic;
    {
        Tape tape;
        Tensor loss = f(x);
        if (loss.size() != 1) fail(ErrorKind::contract, "grad_check expects a scalar-valued function");
        tape.backward(loss);
        auto g = x.grad();
        analytic.assign(g.begin(), g.end());
    }
    PauseRecording pause;
    double max_err = 0.0;
    auto xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
        const double keep = xd[i];
        xd[i] = keep + h;
        const double up = f(x).value();
        xd[i] = keep - h;
        const double dn = f(x).value();
        xd[i] = keep;
        if (!std::isfinite(up) || !std::isfinite(dn)) {
            fail(ErrorKind::numeric, "non-finite value while probing coordinate " + std::to_string(i));
        }
        const double fd = (up - dn) / (2.0 * h);
        const double err = std::abs(analytic[i] - fd) / (std::abs(fd) + 1e-8);
        max_err = std::max(max_err, err);
    }
    return max_err;
}

// Same check for a loss that reads `params` internally (model weights live in
// the params themselves). Returns the max relative error over all coordinates
// of all listed tensors.
inline double grad_check_params(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                                double h = 1e-5) {
    for (Tensor& p : params) p.zero_grad();
    {
        Tape tape;
        Tensor loss = loss_fn();
        if (loss.size() != 1) fail(ErrorKind::contract, "grad_check_params expects a scalar loss");
        tape.backward(loss);
    }
    PauseRecording pause;
    double max_err = 0.0;
    for (Tensor& p : params) {
        auto pd = p.data();
        auto pg = p.grad();
        for (std::size_t i = 0; i < pd.size(); ++i) {
            const double keep = pd[i];
            pd[i] = keep + h;
            const double up = loss_fn().value();
            pd[i] = keep - h;
            const double dn = loss_fn().value();
            pd[i] = keep;
            if (!std::isfinite(up) || !std::isfinite(dn)) {
                fail(ErrorKind::numeric, "non-finite value while probing a parameter");
            }
            const double fd = (up - dn) / (2.0 * h);
            const double err = std::abs(pg[i] - fd) / (std::abs(fd) + 1e-8);
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace kt
