#pragma once

/// \file tensor.hpp
/// \brief Dense 64-bit tensors with define-by-run reverse-mode differentiation.
///
/// A Tensor is a shared handle to a row-major value buffer. Operations are free
/// functions that take the Tape they record onto; the tape is rebuilt for every
/// forward pass and consumed by a single call to backward().
///
/// Parameters are ordinary tensors created with requires_grad=true. Their
/// gradients accumulate across backward passes until zero_grad() is called.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ciea/errors.hpp"

namespace ciea {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

class Tape;
class Tensor;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool has_grad = false;
    bool requires_grad = false;

    std::vector<double>& grad_buffer() {
        if (!has_grad) {
            grad.assign(values.size(), 0.0);
            has_grad = true;
        }
        return grad;
    }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor from(std::vector<double> values, Shape shape, bool requires_grad = false) {
        if (shape_size(shape) != values.size()) {
            throw DimensionError("tensor of shape " + shape_string(shape) + " cannot hold " +
                                 std::to_string(values.size()) + " values");
        }
        Tensor t;
        t.node_ = std::make_shared<detail::Node>();
        t.node_->shape = std::move(shape);
        t.node_->values = std::move(values);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> v(shape_size(shape), 0.0);
        return from(std::move(v), std::move(shape), requires_grad);
    }

    static Tensor filled(Shape shape, double value, bool requires_grad = false) {
        std::vector<double> v(shape_size(shape), value);
        return from(std::move(v), std::move(shape), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from({value}, {1}, requires_grad);
    }

    static Tensor vector(std::vector<double> values, bool requires_grad = false) {
        Shape s{values.size()};
        return from(std::move(values), std::move(s), requires_grad);
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false) {
        return from(std::move(values), {rows, cols}, requires_grad);
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->values.size(); }

    /// Row count of a matrix; a vector is treated as a single row.
    std::size_t rows() const { return rank() == 2 ? node_->shape[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? node_->shape[1] : (rank() == 1 ? node_->shape[0] : 1); }

    std::span<const double> values() const { return node_->values; }
    /// Direct write access, for optimizers and perturbation tests. Never call
    /// while a tape that reads this tensor still awaits backward().
    std::span<double> mutable_values() { return node_->values; }

    double item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
        return node_->values[0];
    }
    double at(std::size_t i) const { return node_->values.at(i); }
    double at(std::size_t r, std::size_t c) const { return node_->values.at(r * cols() + c); }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return node_->has_grad; }

    /// Gradient buffer; empty when no backward pass has reached this tensor.
    std::span<const double> grad() const {
        if (!node_->has_grad) return {};
        return node_->grad;
    }

    void zero_grad() {
        node_->grad.clear();
        node_->has_grad = false;
    }

    /// Deep copy of values (no gradient, no tape history).
    Tensor clone(bool requires_grad) const {
        return from(node_->values, node_->shape, requires_grad);
    }

    bool same_as(const Tensor& other) const noexcept { return node_ == other.node_; }

private:
    friend class Tape;
    friend void backward(const Tensor& loss, Tape& tape);
    friend std::vector<double>& grad_buffer(const Tensor& t);

    std::shared_ptr<detail::Node> node_;
};

/// Writable gradient of a tensor, allocated on first use. Backward rules only.
inline std::vector<double>& grad_buffer(const Tensor& t) { return t.node_->grad_buffer(); }

/// Ordered record of differentiable operations for one forward pass.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    /// A tape that records nothing: results never require grad.
    static Tape inference() {
        Tape t;
        t.recording_ = false;
        return t;
    }

    bool recording() const noexcept { return recording_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool consumed() const noexcept { return consumed_; }

    void reset() {
        entries_.clear();
        consumed_ = false;
    }

    /// Builds the result tensor and, if any input participates in
    /// differentiation, records `rule(out_grad)` for the backward pass.
    template <class Rule>
    Tensor emit(std::vector<double> values, Shape shape, std::vector<Tensor> inputs, Rule rule) {
        Tensor out = Tensor::from(std::move(values), std::move(shape));
        if (!recording_) return out;
        const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                       [](const Tensor& t) { return t.requires_grad(); });
        if (!needs) return out;
        if (consumed_) throw StateError("recording onto a tape that was already consumed by backward()");
        out.node_->requires_grad = true;
        detail::Node* raw = out.node_.get();
        entries_.push_back(Entry{std::move(inputs), out,
                                 [raw, rule = std::move(rule)]() { rule(raw->grad); }});
        return out;
    }

private:
    friend void backward(const Tensor& loss, Tape& tape);

    struct Entry {
        std::vector<Tensor> inputs;
        Tensor output;
        std::function<void()> rule;
    };

    std::vector<Entry> entries_;
    bool recording_ = true;
    bool consumed_ = false;
};

/// Reverse sweep from a scalar loss. Every requires_grad tensor that the tape
/// touched ends up with a gradient buffer (zeros if the loss does not depend on it).
inline void backward(const Tensor& loss, Tape& tape) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " +
                            (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
    }
    if (tape.consumed_) throw StateError("backward() called twice on the same tape without reset()");
    if (loss.requires_grad()) {
        const bool on_tape = std::any_of(tape.entries_.begin(), tape.entries_.end(),
                                         [&](const Tape::Entry& e) { return e.output.same_as(loss); });
        if (!on_tape && !tape.entries_.empty()) {
            throw ContractError("backward(): loss was not produced on this tape");
        }
    }
    tape.consumed_ = true;

    for (auto& e : tape.entries_) {
        for (auto& in : e.inputs) {
            if (in.requires_grad()) in.node_->grad_buffer();
        }
    }
    if (!loss.requires_grad()) return;
    loss.node_->grad_buffer()[0] += 1.0;

    for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
        if (it->output.node_->has_grad) it->rule();
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
    }
}

inline void check_finite_no_nan(std::span<const double> v, const char* op) {
    for (double x : v) {
        if (std::isnan(x)) throw NumericError(std::string(op) + ": NaN input");
    }
}

}  // namespace detail

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double s = av[i * k + p];
            if (s == 0.0) continue;
            const double* brow = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
        }
    }
    return tape.emit(std::move(out), {m, n}, {a, b}, [a, b, m, k, n](const std::vector<double>& g) {
        auto av = a.values();
        auto bv = b.values();
        if (a.requires_grad()) {
            auto& ga = grad_buffer(a);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
                    ga[i * k + p] += acc;
                }
        }
        if (b.requires_grad()) {
            auto& gb = grad_buffer(b);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double s = av[i * k + p];
                    if (s == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += s * g[i * n + j];
                }
        }
    });
}

inline Tensor transpose(Tape& tape, const Tensor& a) {
    detail::require_matrix(a, "transpose");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n);
    auto av = a.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    return tape.emit(std::move(out), {n, m}, {a}, [a, m, n](const std::vector<double>& g) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
}

enum class Elementwise { add, mul };

namespace detail {

/// For each element of `a`, the flat index of the matching element of `b`
/// under right-aligned broadcasting (size-1 or missing axes of b stretch).
inline std::vector<std::size_t> broadcast_map(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) {
        throw DimensionError("cannot broadcast " + shape_string(b) + " to " + shape_string(a));
    }
    const std::size_t offset = a.size() - b.size();
    std::vector<std::size_t> bstride(a.size(), 0);
    std::size_t stride = 1;
    for (std::size_t ax = b.size(); ax-- > 0;) {
        const std::size_t dim_a = a[ax + offset];
        if (b[ax] == dim_a) {
            bstride[ax + offset] = stride;
        } else if (b[ax] != 1) {
            throw DimensionError("cannot broadcast " + shape_string(b) + " to " + shape_string(a));
        }
        stride *= b[ax];
    }
    const std::size_t total = shape_size(a);
    std::vector<std::size_t> map(total);
    std::vector<std::size_t> idx(a.size(), 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t bi = 0;
        for (std::size_t ax = 0; ax < a.size(); ++ax) bi += idx[ax] * bstride[ax];
        map[flat] = bi;
        for (std::size_t ax = a.size(); ax-- > 0;) {
            if (++idx[ax] < a[ax]) break;
            idx[ax] = 0;
        }
    }
    return map;
}

}  // namespace detail

/// Pointwise a (+|*) b, where b equals a's shape or broadcasts to it.
inline Tensor elementwise(Tape& tape, const Tensor& a, const Tensor& b, Elementwise kind) {
    const bool same = a.shape() == b.shape();
    std::vector<std::size_t> map;
    if (!same) map = detail::broadcast_map(a.shape(), b.shape());
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double y = bv[same ? i : map[i]];
        out[i] = kind == Elementwise::add ? av[i] + y : av[i] * y;
    }
    return tape.emit(std::move(out), a.shape(), {a, b},
                     [a, b, kind, same, map = std::move(map)](const std::vector<double>& g) {
                         auto av = a.values();
                         auto bv = b.values();
                         if (a.requires_grad()) {
                             auto& ga = grad_buffer(a);
                             for (std::size_t i = 0; i < g.size(); ++i)
                                 ga[i] += kind == Elementwise::add ? g[i] : g[i] * bv[same ? i : map[i]];
                         }
                         if (b.requires_grad()) {
                             auto& gb = grad_buffer(b);
                             for (std::size_t i = 0; i < g.size(); ++i)
                                 gb[same ? i : map[i]] += kind == Elementwise::add ? g[i] : g[i] * av[i];
                         }
                     });
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    return elementwise(tape, a, b, Elementwise::add);
}
inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    return elementwise(tape, a, b, Elementwise::mul);
}

/// s * a + shift, pointwise.
inline Tensor affine(Tape& tape, const Tensor& a, double s, double shift = 0.0) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& x : out) x = s * x + shift;
    return tape.emit(std::move(out), a.shape(), {a}, [a, s](const std::vector<double>& g) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

inline Tensor scale(Tape& tape, const Tensor& a, double s) { return affine(tape, a, s, 0.0); }

inline Tensor sum(Tape& tape, const Tensor& a) {
    double total = 0.0;
    for (double x : a.values()) total += x;
    return tape.emit({total}, {1}, {a}, [a](const std::vector<double>& g) {
        auto& ga = grad_buffer(a);
        for (double& x : ga) x += g[0];
    });
}

inline Tensor tanh(Tape& tape, const Tensor& a) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& x : out) x = std::tanh(x);
    auto y = out;
    return tape.emit(std::move(out), a.shape(), {a}, [a, y = std::move(y)](const std::vector<double>& g) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
}

/// GELU, tanh approximation.
inline Tensor gelu(Tape& tape, const Tensor& a) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k = 0.044715;
    auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double x = av[i];
        out[i] = 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x)));
    }
    return tape.emit(std::move(out), a.shape(), {a}, [a](const std::vector<double>& g) {
        auto av = a.values();
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = av[i];
            const double t = std::tanh(c * (x + k * x * x * x));
            const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
            ga[i] += g[i] * d;
        }
    });
}

/// Row-wise softmax with max subtraction. -inf entries get probability 0;
/// every row needs at least one finite entry.
inline Tensor softmax_rows(Tape& tape, const Tensor& a) {
    detail::require_matrix(a, "softmax_rows");
    detail::check_finite_no_nan(a.values(), "softmax_rows");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    auto av = a.values();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = av.data() + i * n;
        const double mx = *std::max_element(row, row + n);
        if (!std::isfinite(mx)) throw NumericError("softmax_rows: row " + std::to_string(i) + " has no finite entry");
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = std::exp(row[j] - mx);
            z += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    auto y = out;
    return tape.emit(std::move(out), {m, n}, {a}, [a, m, n, y = std::move(y)](const std::vector<double>& g) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
        }
    });
}

/// log(sum(exp(a))) over all elements, max-shifted.
inline Tensor logsumexp(Tape& tape, const Tensor& a) {
    detail::check_finite_no_nan(a.values(), "logsumexp");
    auto av = a.values();
    if (av.empty()) throw ContractError("logsumexp of an empty tensor");
    const double mx = *std::max_element(av.begin(), av.end());
    double z = 0.0;
    for (double x : av) z += std::exp(x - mx);
    const double result = mx + std::log(z);
    return tape.emit({result}, {1}, {a}, [a, result](const std::vector<double>& g) {
        auto av = a.values();
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[0] * std::exp(av[i] - result);
    });
}

inline constexpr double kNormEpsilon = 1e-12;

/// a.b / (max(|a|, eps) * max(|b|, eps)), flattening both operands.
inline Tensor cosine(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw DimensionError("cosine: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    auto av = a.values();
    auto bv = b.values();
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        dot += av[i] * bv[i];
        na += av[i] * av[i];
        nb += bv[i] * bv[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    const double ga_norm = std::max(na, kNormEpsilon);
    const double gb_norm = std::max(nb, kNormEpsilon);
    const double c = dot / (ga_norm * gb_norm);
    return tape.emit({c}, {1}, {a, b}, [a, b, c, na, nb, ga_norm, gb_norm](const std::vector<double>& g) {
        auto av = a.values();
        auto bv = b.values();
        const double up = g[0];
        if (a.requires_grad()) {
            auto& gr = grad_buffer(a);
            const bool clipped = na <= kNormEpsilon;
            for (std::size_t i = 0; i < av.size(); ++i) {
                double d = bv[i] / (ga_norm * gb_norm);
                if (!clipped) d -= c * av[i] / (na * na);
                gr[i] += up * d;
            }
        }
        if (b.requires_grad()) {
            auto& gr = grad_buffer(b);
            const bool clipped = nb <= kNormEpsilon;
            for (std::size_t i = 0; i < bv.size(); ++i) {
                double d = av[i] / (ga_norm * gb_norm);
                if (!clipped) d -= c * bv[i] / (nb * nb);
                gr[i] += up * d;
            }
        }
    });
}

/// Each row divided by max(|row|, eps). Vectors are treated as one row.
inline Tensor normalize_rows(Tape& tape, const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    auto av = a.values();
    std::vector<double> out(av.begin(), av.end());
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += av[i * n + j] * av[i * n + j];
        norms[i] = std::sqrt(s);
        const double d = std::max(norms[i], kNormEpsilon);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= d;
    }
    auto y = out;
    return tape.emit(std::move(out), a.shape(), {a},
                     [a, m, n, y = std::move(y), norms = std::move(norms)](const std::vector<double>& g) {
                         auto& ga = grad_buffer(a);
                         for (std::size_t i = 0; i < m; ++i) {
                             if (norms[i] <= kNormEpsilon) {
                                 for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] / kNormEpsilon;
                                 continue;
                             }
                             double dot = 0.0;
                             for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * g[i * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                                 ga[i * n + j] += (g[i * n + j] - y[i * n + j] * dot) / norms[i];
                         }
                     });
}

/// Per-row maximum over columns -> vector of length rows. Ties pick the
/// lowest column, which alone receives the subgradient.
inline Tensor row_max(Tape& tape, const Tensor& a) {
    detail::require_matrix(a, "row_max");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    if (n == 0) throw DimensionError("row_max over zero columns");
    auto av = a.values();
    std::vector<double> out(m);
    std::vector<std::size_t> arg(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < n; ++j)
            if (av[i * n + j] > av[i * n + best]) best = j;
        arg[i] = best;
        out[i] = av[i * n + best];
    }
    return tape.emit(std::move(out), {m}, {a}, [a, n, arg = std::move(arg)](const std::vector<double>& g) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < arg.size(); ++i) ga[i * n + arg[i]] += g[i];
    });
}

/// Rows of `table` selected by `ids`, in order. Backward scatter-adds.
inline Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::uint32_t> ids) {
    detail::require_matrix(table, "gather_rows");
    const std::size_t v = table.shape()[0], d = table.shape()[1];
    std::vector<double> out(ids.size() * d);
    auto tv = table.values();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= v) {
            throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " out of range for table of " +
                                std::to_string(v) + " rows");
        }
        std::copy_n(tv.data() + ids[i] * d, d, out.data() + i * d);
    }
    std::vector<std::uint32_t> idv(ids.begin(), ids.end());
    return tape.emit(std::move(out), {ids.size(), d}, {table},
                     [table, d, idv = std::move(idv)](const std::vector<double>& g) {
                         auto& gt = grad_buffer(table);
                         for (std::size_t i = 0; i < idv.size(); ++i)
                             for (std::size_t j = 0; j < d; ++j) gt[idv[i] * d + j] += g[i * d + j];
                     });
}

/// Concatenation along axis 0. Trailing dimensions must agree; vectors
/// concatenate element-wise.
inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t lead = 0;
    std::vector<double> out;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        if (p.rank() != parts[0].rank() || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
            throw DimensionError("concat: " + shape_string(p.shape()) + " does not match " +
                                 shape_string(parts[0].shape()));
        }
        offsets.push_back(out.size());
        out.insert(out.end(), p.values().begin(), p.values().end());
        lead += p.shape()[0];
    }
    Shape shape{lead};
    shape.insert(shape.end(), tail.begin(), tail.end());
    return tape.emit(std::move(out), std::move(shape), parts,
                     [parts, offsets = std::move(offsets)](const std::vector<double>& g) {
                         for (std::size_t p = 0; p < parts.size(); ++p) {
                             if (!parts[p].requires_grad()) continue;
                             auto& gp = grad_buffer(parts[p]);
                             for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[p] + i];
                         }
                     });
}

/// Rows [begin, begin+count) of a matrix.
inline Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t begin, std::size_t count) {
    detail::require_matrix(a, "slice_rows");
    const std::size_t n = a.shape()[1];
    if (begin + count > a.shape()[0]) throw DimensionError("slice_rows out of range for " + shape_string(a.shape()));
    auto av = a.values();
    std::vector<double> out(av.begin() + begin * n, av.begin() + (begin + count) * n);
    return tape.emit(std::move(out), {count, n}, {a}, [a, begin, n](const std::vector<double>& g) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
    });
}

/// Columns [begin, begin+count) of a matrix.
inline Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t begin, std::size_t count) {
    detail::require_matrix(a, "slice_cols");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    if (begin + count > n) throw DimensionError("slice_cols out of range for " + shape_string(a.shape()));
    auto av = a.values();
    std::vector<double> out(m * count);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = av[i * n + begin + j];
    return tape.emit(std::move(out), {m, count}, {a}, [a, m, n, begin, count](const std::vector<double>& g) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j) ga[i * n + begin + j] += g[i * count + j];
    });
}

/// Side-by-side concatenation of matrices with equal row counts.
inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols of zero tensors");
    for (const auto& p : parts) detail::require_matrix(p, "concat_cols");
    const std::size_t m = parts[0].shape()[0];
    std::size_t n = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        if (p.shape()[0] != m) throw DimensionError("concat_cols: row counts differ");
        offsets.push_back(n);
        n += p.shape()[1];
    }
    std::vector<double> out(m * n);
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const std::size_t w = parts[p].shape()[1];
        auto pv = parts[p].values();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * n + offsets[p] + j] = pv[i * w + j];
    }
    return tape.emit(std::move(out), {m, n}, parts, [parts, offsets, m, n](const std::vector<double>& g) {
        for (std::size_t p = 0; p < parts.size(); ++p) {
            if (!parts[p].requires_grad()) continue;
            const std::size_t w = parts[p].shape()[1];
            auto& gp = grad_buffer(parts[p]);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + offsets[p] + j];
        }
    });
}

inline Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size()) {
        throw DimensionError("reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    return tape.emit(std::move(out), std::move(shape), {a}, [a](const std::vector<double>& g) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

/// Row-wise layer normalization with learned scale and offset (length = cols).
inline Tensor layer_norm_rows(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              double eps = 1e-5) {
    detail::require_matrix(x, "layer_norm_rows");
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    if (gamma.size() != n || beta.size() != n) throw DimensionError("layer_norm_rows: scale/offset length mismatch");
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    std::vector<double> out(m * n), xhat(m * n), inv(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += xv[i * n + j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (xv[i * n + j] - mean) * (xv[i * n + j] - mean);
        var /= static_cast<double>(n);
        inv[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (xv[i * n + j] - mean) * inv[i];
            out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
        }
    }
    return tape.emit(std::move(out), {m, n}, {x, gamma, beta},
                     [x, gamma, beta, m, n, xhat = std::move(xhat), inv = std::move(inv)](const std::vector<double>& g) {
                         auto gv = gamma.values();
                         if (gamma.requires_grad()) {
                             auto& gg = grad_buffer(gamma);
                             for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
                         }
                         if (beta.requires_grad()) {
                             auto& gb = grad_buffer(beta);
                             for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                         }
                         if (x.requires_grad()) {
                             auto& gx = grad_buffer(x);
                             const double nn = static_cast<double>(n);
                             for (std::size_t i = 0; i < m; ++i) {
                                 double s1 = 0.0, s2 = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) {
                                     const double dxh = g[i * n + j] * gv[j];
                                     s1 += dxh;
                                     s2 += dxh * xhat[i * n + j];
                                 }
                                 for (std::size_t j = 0; j < n; ++j) {
                                     const double dxh = g[i * n + j] * gv[j];
                                     gx[i * n + j] += inv[i] / nn * (nn * dxh - s1 - xhat[i * n + j] * s2);
                                 }
                             }
                         }
                     });
}

/// Arithmetic mean of a list of scalar tensors.
inline Tensor mean_of(Tape& tape, const std::vector<Tensor>& scalars) {
    if (scalars.empty()) throw ContractError("mean of zero tensors");
    return scale(tape, sum(tape, concat(tape, scalars)), 1.0 / static_cast<double>(scalars.size()));
}

}  // namespace ciea
