// Dense float64 tensors and a reverse-mode tape.
//
// A Tape records every primitive evaluated on it, in order. Calling
// Tape::backward on a scalar node walks the tape in exact reverse order and
// accumulates analytic gradients; parameter leaves flush their gradient into
// the owning Parameter so uses across a step sum up.
//
// Layout conventions used by the primitives:
//   - sequence data is (batch, channels, length), row-major
//   - feature / logit matrices are (batch, features)
//   - conv1d weights are (out_channels, in_channels, kernel)
//   - conv1d is a cross-correlation: y[t] = sum_k w[k] * x[t * stride + k - padding]
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace osr {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;

    ShapeError(const std::string& primitive, const Shape& a, const Shape& b)
        : std::invalid_argument(primitive + ": incompatible shapes " + to_string(a) + " and " +
                                to_string(b)) {}
};

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), values_(element_count(shape_), fill) {
        check_dims();
    }

    Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
        check_dims();
        if (values_.size() != element_count(shape_))
            throw ShapeError("tensor: " + std::to_string(values_.size()) + " values do not fill shape " +
                             to_string(shape_));
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double item() const {
        if (values_.size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape_) + " is not a scalar");
        return values_[0];
    }

    void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

    bool operator==(const Tensor&) const = default;

private:
    void check_dims() const {
        for (auto d : shape_)
            if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + to_string(shape_));
    }

    Shape shape_;
    std::vector<double> values_;
};

/// Trainable tensor with a gradient buffer of identical shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape.
class Var {
public:
    Var() = default;

    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    /// Receives the tape and the id of the node whose gradient is complete.
    using Backward = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value) { return push(std::move(value), false, nullptr, {}); }

    /// Leaf whose gradient is kept on the tape (readable through grad()).
    Var variable(Tensor value) { return push(std::move(value), true, nullptr, {}); }

    Var parameter(Parameter& p) { return push(p.value, true, &p, {}); }

    /// Appends the result of a primitive. `backward` is only stored when one of
    /// the inputs requires a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
        bool needs = false;
        for (const auto& v : inputs) {
            if (v.tape_ != this) throw std::invalid_argument("tape: operand recorded on a different tape");
            needs = needs || nodes_[v.id_].requires_grad;
        }
        return push(std::move(value), needs, nullptr, needs ? std::move(backward) : Backward{});
    }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    bool requires_grad(Var v) const { return requires_grad(v.id()); }

    /// Gradient of the last backward root with respect to node `id`; zeros if none flowed.
    Tensor grad(std::size_t id) const {
        const auto& n = nodes_.at(id);
        return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
    }
    Tensor grad(Var v) const { return grad(v.id()); }

    /// Gradient buffer of node `id`, allocated on first use.
    Tensor& grad_buffer(std::size_t id) {
        auto& n = nodes_[id];
        if (n.grad.empty()) n.grad = Tensor(n.value.shape());
        return n.grad;
    }

    void backward(Var root) {
        if (root.tape_ != this) throw std::invalid_argument("tape: backward root recorded on a different tape");
        if (root.value().size() != 1)
            throw ShapeError("backward: root must be a scalar, got " + to_string(root.shape()));
        for (auto& n : nodes_) n.grad = Tensor();
        grad_buffer(root.id_)[0] = 1.0;
        for (std::size_t i = root.id_ + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (n.grad.empty() || !n.requires_grad) continue;
            if (n.backward) n.backward(*this, i);
            if (n.param != nullptr) {
                auto dst = n.param->grad.values();
                auto src = n.grad.values();
                for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
            }
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Parameter* param = nullptr;
        Backward backward;
    };

    Var push(Tensor value, bool requires_grad, Parameter* param, Backward backward) {
        nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, param, std::move(backward)});
        return Var(this, nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline MatrixMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
    return MatrixMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline ConstMatrixMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
    return ConstMatrixMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_same_shape(const char* primitive, const Var& a, const Var& b) {
    if (a.shape() != b.shape()) throw ShapeError(primitive, a.shape(), b.shape());
}

inline void require_rank(const char* primitive, const Var& a, std::size_t rank) {
    if (a.shape().size() != rank)
        throw ShapeError(std::string(primitive) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         to_string(a.shape()));
}

// Adds `f(i)` into the gradient buffer of `target` when it requires one.
template <typename F>
void accumulate(Tape& tape, const Var& target, F&& f) {
    if (!tape.requires_grad(target)) return;
    auto g = tape.grad_buffer(target.id()).values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += f(i);
}

// `derivative(x, y, g)` maps input, output and output gradient to the input gradient.
template <typename F, typename D>
Var unary(Var a, F forward, D derivative) {
    Tensor out(a.shape());
    auto in = a.value().values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = forward(in[i]);
    return a.tape().record(std::move(out), {a}, [a, derivative](Tape& t, std::size_t self) {
        const auto x = t.value(a.id()).values();
        const auto y = t.value(self).values();
        const auto g = t.grad_buffer(self).values();
        accumulate(t, a, [&](std::size_t i) { return derivative(x[i], y[i], g[i]); });
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise primitives

inline Var add(Var a, Var b) {
    detail::require_same_shape("add", a, b);
    Tensor out(a.shape());
    auto x = a.value().values(), y = b.value().values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const auto g = t.grad_buffer(self).values();
        detail::accumulate(t, a, [&](std::size_t i) { return g[i]; });
        detail::accumulate(t, b, [&](std::size_t i) { return g[i]; });
    });
}

inline Var multiply(Var a, Var b) {
    detail::require_same_shape("multiply", a, b);
    Tensor out(a.shape());
    auto x = a.value().values(), y = b.value().values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const auto g = t.grad_buffer(self).values();
        const auto x = t.value(a.id()).values();
        const auto y = t.value(b.id()).values();
        detail::accumulate(t, a, [&](std::size_t i) { return g[i] * y[i]; });
        detail::accumulate(t, b, [&](std::size_t i) { return g[i] * x[i]; });
    });
}

inline Var scale(Var a, double factor) {
    return detail::unary(
        a, [factor](double x) { return factor * x; }, [factor](double, double, double g) { return factor * g; });
}

inline Var add_constant(Var a, double c) {
    return detail::unary(a, [c](double x) { return x + c; }, [](double, double, double g) { return g; });
}

/// Subgradient at 0 is 0; NaN passes through.
inline Var relu(Var a) {
    return detail::unary(
        a, [](double x) { return x <= 0.0 ? 0.0 : x; }, [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

inline Var log(Var a) {
    return detail::unary(
        a, [](double x) { return std::log(x); }, [](double x, double, double g) { return g / x; });
}

inline Var square(Var a) {
    return detail::unary(
        a, [](double x) { return x * x; }, [](double x, double, double g) { return 2.0 * x * g; });
}

// ---------------------------------------------------------------------------
// Reductions

/// Sum of all elements, shape [1].
inline Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, std::size_t self) {
        const double g = t.grad_buffer(self)[0];
        detail::accumulate(t, a, [g](std::size_t) { return g; });
    });
}

/// (n, m) -> (n): sum over the last axis.
inline Var row_sum(Var a) {
    detail::require_rank("row_sum", a, 2);
    const std::size_t n = a.shape()[0], m = a.shape()[1];
    Tensor out({n});
    const auto x = a.value().values();
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += x[i * m + j];
        out[i] = s;
    }
    return a.tape().record(std::move(out), {a}, [a, m](Tape& t, std::size_t self) {
        const auto g = t.grad_buffer(self).values();
        detail::accumulate(t, a, [&](std::size_t i) { return g[i / m]; });
    });
}

/// (n, m) -> (n): Euclidean norm of each row. The gradient at a zero row is 0.
inline Var vector_norm(Var a) {
    detail::require_rank("vector_norm", a, 2);
    const std::size_t n = a.shape()[0], m = a.shape()[1];
    Tensor out({n});
    const auto x = a.value().values();
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += x[i * m + j] * x[i * m + j];
        out[i] = std::sqrt(s);
    }
    return a.tape().record(std::move(out), {a}, [a, m](Tape& t, std::size_t self) {
        const auto g = t.grad_buffer(self).values();
        const auto y = t.value(self).values();
        const auto x = t.value(a.id()).values();
        detail::accumulate(t, a, [&](std::size_t i) {
            const double norm = y[i / m];
            return norm > 0.0 ? g[i / m] * x[i] / norm : 0.0;
        });
    });
}

/// (n, c, l) -> (n, c): mean over the length axis.
inline Var global_average_pool(Var a) {
    detail::require_rank("global_average_pool", a, 3);
    const std::size_t n = a.shape()[0], c = a.shape()[1], l = a.shape()[2];
    Tensor out({n, c});
    const auto x = a.value().values();
    for (std::size_t r = 0; r < n * c; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < l; ++k) s += x[r * l + k];
        out[r] = s / static_cast<double>(l);
    }
    return a.tape().record(std::move(out), {a}, [a, l](Tape& t, std::size_t self) {
        const auto g = t.grad_buffer(self).values();
        const double inv = 1.0 / static_cast<double>(l);
        detail::accumulate(t, a, [&](std::size_t i) { return g[i / l] * inv; });
    });
}

// ---------------------------------------------------------------------------
// Softmax family, row-wise over (n, m). Both subtract the row max first.

inline Var softmax(Var a) {
    detail::require_rank("softmax", a, 2);
    const std::size_t n = a.shape()[0], m = a.shape()[1];
    Tensor out(a.shape());
    const auto x = a.value().values();
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = &x[i * m];
        const double mx = *std::max_element(row, row + m);
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) z += (out[i * m + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
    }
    return a.tape().record(std::move(out), {a}, [a, n, m](Tape& t, std::size_t self) {
        if (!t.requires_grad(a)) return;
        const auto g = t.grad_buffer(self).values();
        const auto s = t.value(self).values();
        auto dx = t.grad_buffer(a.id()).values();
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * s[i * m + j];
            for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += s[i * m + j] * (g[i * m + j] - dot);
        }
    });
}

inline Var log_softmax(Var a) {
    detail::require_rank("log_softmax", a, 2);
    const std::size_t n = a.shape()[0], m = a.shape()[1];
    Tensor out(a.shape());
    const auto x = a.value().values();
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = &x[i * m];
        const double mx = *std::max_element(row, row + m);
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] = row[j] - lse;
    }
    return a.tape().record(std::move(out), {a}, [a, n, m](Tape& t, std::size_t self) {
        if (!t.requires_grad(a)) return;
        const auto g = t.grad_buffer(self).values();
        const auto y = t.value(self).values();
        auto dx = t.grad_buffer(a.id()).values();
        for (std::size_t i = 0; i < n; ++i) {
            double gs = 0.0;
            for (std::size_t j = 0; j < m; ++j) gs += g[i * m + j];
            for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += g[i * m + j] - std::exp(y[i * m + j]) * gs;
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// (m, k) x (k, n) -> (m, n)
inline Var matmul(Var a, Var b) {
    detail::require_rank("matmul", a, 2);
    detail::require_rank("matmul", b, 2);
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) throw ShapeError("matmul", a.shape(), b.shape());
    Tensor out({m, n});
    detail::as_matrix(out, m, n).noalias() = detail::as_matrix(a.value(), m, k) * detail::as_matrix(b.value(), k, n);
    return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::size_t self) {
        const auto g = detail::as_matrix(t.grad_buffer(self), m, n);
        if (t.requires_grad(a))
            detail::as_matrix(t.grad_buffer(a.id()), m, k).noalias() += g * detail::as_matrix(t.value(b.id()), k, n).transpose();
        if (t.requires_grad(b))
            detail::as_matrix(t.grad_buffer(b.id()), k, n).noalias() += detail::as_matrix(t.value(a.id()), m, k).transpose() * g;
    });
}

/// (n, f) x (o, f)^T -> (n, o): a bias-free dense layer.
inline Var linear(Var x, Var weight) {
    detail::require_rank("linear", x, 2);
    detail::require_rank("linear", weight, 2);
    const std::size_t n = x.shape()[0], f = x.shape()[1], o = weight.shape()[0];
    if (weight.shape()[1] != f) throw ShapeError("linear", x.shape(), weight.shape());
    Tensor out({n, o});
    detail::as_matrix(out, n, o).noalias() =
        detail::as_matrix(x.value(), n, f) * detail::as_matrix(weight.value(), o, f).transpose();
    return x.tape().record(std::move(out), {x, weight}, [x, weight, n, f, o](Tape& t, std::size_t self) {
        const auto g = detail::as_matrix(t.grad_buffer(self), n, o);
        if (t.requires_grad(x))
            detail::as_matrix(t.grad_buffer(x.id()), n, f).noalias() += g * detail::as_matrix(t.value(weight.id()), o, f);
        if (t.requires_grad(weight))
            detail::as_matrix(t.grad_buffer(weight.id()), o, f).noalias() += g.transpose() * detail::as_matrix(t.value(x.id()), n, f);
    });
}

inline std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                        std::size_t padding) {
    if (stride == 0) throw ShapeError("conv1d: stride must be positive");
    if (length + 2 * padding < kernel)
        throw ShapeError("conv1d: kernel " + std::to_string(kernel) + " longer than padded input " +
                         std::to_string(length + 2 * padding));
    return (length + 2 * padding - kernel) / stride + 1;
}

namespace detail {

// Output positions j in [lo, hi) read x[j * stride + k - padding] inside the input.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t length, std::size_t stride,
                                                       std::size_t padding, std::size_t out_length) {
    const std::size_t lo = k >= padding ? 0 : (padding - k + stride - 1) / stride;
    const std::size_t limit = length + padding;  // j * stride + k < limit
    const std::size_t hi = limit > k ? std::min(out_length, (limit - k + stride - 1) / stride) : 0;
    return {std::min(lo, hi), hi};
}

// col[(ci * kernel + k), j] = x[ci, j * stride + k - padding], zero outside the input.
inline void im2col(const double* x, std::size_t channels, std::size_t length, std::size_t kernel,
                   std::size_t stride, std::size_t padding, std::size_t out_length, double* col) {
    for (std::size_t k = 0; k < kernel; ++k) {
        const auto [lo, hi] = valid_range(k, length, stride, padding, out_length);
        for (std::size_t ci = 0; ci < channels; ++ci) {
            double* row = col + (ci * kernel + k) * out_length;
            std::fill(row, row + out_length, 0.0);
            if (lo == hi) continue;
            const double* xc = x + ci * length + (lo * stride + k - padding);
            for (std::size_t j = lo; j < hi; ++j) row[j] = xc[(j - lo) * stride];
        }
    }
}

inline void col2im_add(const double* col, std::size_t channels, std::size_t length, std::size_t kernel,
                       std::size_t stride, std::size_t padding, std::size_t out_length, double* x) {
    for (std::size_t k = 0; k < kernel; ++k) {
        const auto [lo, hi] = valid_range(k, length, stride, padding, out_length);
        if (lo == hi) continue;
        for (std::size_t ci = 0; ci < channels; ++ci) {
            double* xc = x + ci * length + (lo * stride + k - padding);
            const double* row = col + (ci * kernel + k) * out_length;
            for (std::size_t j = lo; j < hi; ++j) xc[(j - lo) * stride] += row[j];
        }
    }
}

}  // namespace detail

/// x: (n, c_in, l), weight: (c_out, c_in, k) -> (n, c_out, l_out), no kernel flip.
inline Var conv1d(Var x, Var weight, std::size_t stride = 1, std::size_t padding = 0) {
    detail::require_rank("conv1d", x, 3);
    detail::require_rank("conv1d", weight, 3);
    const std::size_t n = x.shape()[0], cin = x.shape()[1], len = x.shape()[2];
    const std::size_t cout = weight.shape()[0], kernel = weight.shape()[2];
    if (weight.shape()[1] != cin) throw ShapeError("conv1d", x.shape(), weight.shape());
    const std::size_t lout = conv1d_output_length(len, kernel, stride, padding);
    const std::size_t rows = cin * kernel;

    Tensor out({n, cout, lout});
    std::vector<double> col(rows * lout);
    const auto w = detail::as_matrix(weight.value(), cout, rows);
    for (std::size_t s = 0; s < n; ++s) {
        detail::im2col(x.value().data() + s * cin * len, cin, len, kernel, stride, padding, lout, col.data());
        detail::MatrixMap(out.data() + s * cout * lout, cout, lout).noalias() =
            w * detail::ConstMatrixMap(col.data(), rows, lout);
    }

    return x.tape().record(std::move(out), {x, weight}, [=](Tape& t, std::size_t self) {
        const bool need_x = t.requires_grad(x), need_w = t.requires_grad(weight);
        const Tensor& g = t.grad_buffer(self);
        const auto wm = detail::as_matrix(t.value(weight.id()), cout, rows);
        std::vector<double> col(rows * lout);
        double* dx = need_x ? t.grad_buffer(x.id()).data() : nullptr;
        double* dw_data = need_w ? t.grad_buffer(weight.id()).data() : nullptr;
        for (std::size_t s = 0; s < n; ++s) {
            const detail::ConstMatrixMap gs(g.data() + s * cout * lout, cout, lout);
            if (need_w) {
                detail::im2col(t.value(x.id()).data() + s * cin * len, cin, len, kernel, stride, padding, lout,
                               col.data());
                detail::MatrixMap(dw_data, cout, rows).noalias() +=
                    gs * detail::ConstMatrixMap(col.data(), rows, lout).transpose();
            }
            if (need_x) {
                detail::MatrixMap(col.data(), rows, lout).noalias() = wm.transpose() * gs;
                detail::col2im_add(col.data(), cin, len, kernel, stride, padding, lout, dx + s * cin * len);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Batch normalization over (n, c, l), statistics per channel.

struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels)
        : running_mean({channels}, 0.0), running_var({channels}, 1.0) {}
};

enum class Mode { train, eval };

namespace detail {

inline Var batch_norm(Var x, Var gamma, Var beta, const BatchNormState& state, BatchNormState* update, Mode mode) {
    detail::require_rank("batch_norm", x, 3);
    const std::size_t n = x.shape()[0], c = x.shape()[1], l = x.shape()[2];
    if (gamma.shape() != Shape{c}) throw ShapeError("batch_norm", x.shape(), gamma.shape());
    if (beta.shape() != Shape{c}) throw ShapeError("batch_norm", x.shape(), beta.shape());
    if (state.running_mean.shape() != Shape{c}) throw ShapeError("batch_norm", x.shape(), state.running_mean.shape());

    const std::size_t count = n * l;
    const auto xv = x.value().values();
    std::vector<double> mean(c), inv_std(c);
    if (mode == Mode::train) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t k = 0; k < l; ++k) s += xv[(b * c + ch) * l + k];
            const double mu = s / static_cast<double>(count);
            double ss = 0.0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t k = 0; k < l; ++k) {
                    const double d = xv[(b * c + ch) * l + k] - mu;
                    ss += d * d;
                }
            const double var = ss / static_cast<double>(count);
            mean[ch] = mu;
            inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
            if (update != nullptr) {
                const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
                update->running_mean[ch] = (1.0 - update->momentum) * update->running_mean[ch] + update->momentum * mu;
                update->running_var[ch] = (1.0 - update->momentum) * update->running_var[ch] + update->momentum * unbiased;
            }
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = state.running_mean[ch];
            inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
        }
    }

    Tensor out(x.shape());
    const auto gv = gamma.value().values(), bv = beta.value().values();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (b * c + ch) * l;
            for (std::size_t k = 0; k < l; ++k)
                out[base + k] = gv[ch] * (xv[base + k] - mean[ch]) * inv_std[ch] + bv[ch];
        }

    return x.tape().record(std::move(out), {x, gamma, beta},
                           [=, mean = std::move(mean), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const auto g = t.grad_buffer(self).values();
        const auto xv = t.value(x.id()).values();
        const auto gv = t.value(gamma.id()).values();
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t base = (b * c + ch) * l;
                for (std::size_t k = 0; k < l; ++k) {
                    sum_g[ch] += g[base + k];
                    sum_gx[ch] += g[base + k] * (xv[base + k] - mean[ch]) * inv_std[ch];
                }
            }
        if (t.requires_grad(gamma)) {
            auto dg = t.grad_buffer(gamma.id()).values();
            for (std::size_t ch = 0; ch < c; ++ch) dg[ch] += sum_gx[ch];
        }
        if (t.requires_grad(beta)) {
            auto db = t.grad_buffer(beta.id()).values();
            for (std::size_t ch = 0; ch < c; ++ch) db[ch] += sum_g[ch];
        }
        if (!t.requires_grad(x)) return;
        auto dx = t.grad_buffer(x.id()).values();
        const double m = static_cast<double>(count);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t base = (b * c + ch) * l;
                const double k0 = gv[ch] * inv_std[ch];
                for (std::size_t k = 0; k < l; ++k) {
                    if (mode == Mode::train) {
                        const double xhat = (xv[base + k] - mean[ch]) * inv_std[ch];
                        dx[base + k] += k0 * (g[base + k] - sum_g[ch] / m - xhat * sum_gx[ch] / m);
                    } else {
                        dx[base + k] += k0 * g[base + k];
                    }
                }
            }
    });
}

}  // namespace detail

/// Train mode normalizes with biased batch statistics and folds the unbiased
/// variance into `state`'s running estimate. Eval mode is the affine map
/// defined by the running statistics.
inline Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode) {
    return detail::batch_norm(x, gamma, beta, state, &state, mode);
}

/// Eval-mode batch normalization; `state` is only read.
inline Var batch_norm(Var x, Var gamma, Var beta, const BatchNormState& state) {
    return detail::batch_norm(x, gamma, beta, state, nullptr, Mode::eval);
}

// ---------------------------------------------------------------------------
// Finite-difference verification

/// Builds a scalar from its input variable.
using ScalarFunction = std::function<Var(Tape&, Var)>;

/// Largest |analytic - central difference| / max(1, |analytic|) over the
/// coordinates of `point`.
inline double grad_check(const ScalarFunction& f, const Tensor& point, double epsilon = 1e-6) {
    if (epsilon < 1e-7 || epsilon > 1e-3) throw std::invalid_argument("grad_check: epsilon must lie in [1e-7, 1e-3]");
    Tensor analytic;
    {
        Tape tape;
        Var x = tape.variable(point);
        Var y = f(tape, x);
        tape.backward(y);
        analytic = tape.grad(x);
    }
    auto eval = [&](const Tensor& p) {
        Tape tape;
        return f(tape, tape.variable(p)).value().item();
    };
    double worst = 0.0;
    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        probe[i] = point[i] + epsilon;
        const double up = eval(probe);
        probe[i] = point[i] - epsilon;
        const double down = eval(probe);
        probe[i] = point[i];
        const double numeric = (up - down) / (2.0 * epsilon);
        worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
    }
    return worst;
}

/// Same measure over every coordinate of a set of parameters. `f` must build
/// the scalar from the parameters' current values (through Tape::parameter).
inline double grad_check(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params,
                         double epsilon = 1e-6) {
    if (epsilon < 1e-7 || epsilon > 1e-3) throw std::invalid_argument("grad_check: epsilon must lie in [1e-7, 1e-3]");
    for (auto* p : params) p->zero_grad();
    {
        Tape tape;
        tape.backward(f(tape));
    }
    std::vector<Tensor> analytic;
    for (auto* p : params) analytic.push_back(p->grad);
    auto eval = [&] {
        Tape tape;
        return f(tape).value().item();
    };
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& v = params[pi]->value;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double orig = v[i];
            v[i] = orig + epsilon;
            const double up = eval();
            v[i] = orig - epsilon;
            const double down = eval();
            v[i] = orig;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double a = analytic[pi][i];
            worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
        }
    }
    return worst;
}

}  // namespace osr
