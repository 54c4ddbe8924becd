#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

#include "skillnet/errors.hpp"
#include "skillnet/tape.hpp"
#include "skillnet/tensor.hpp"

namespace skillnet {

enum class UnaryOp { sigmoid, log, exp, neg, abs, relu, tanh, square, softplus, lgamma };
enum class BinaryOp { add, sub, mul, div };
enum class ReduceOp { sum, mean };

namespace detail {

using ImplPtr = std::shared_ptr<TensorImpl>;

inline void accumulate(const ImplPtr& t, std::size_t i, double v) {
    t->ensure_grad();
    t->grad[i] += v;
    t->grad_touched = true;
}

inline bool wants_grad(const ImplPtr& t) { return t->requires_grad; }

// Builds the result tensor and records a tape node when any input needs
// gradients and a tape is active. `make_backward` receives the output impl.
template <typename MakeBackward>
Tensor finish(Shape shape, std::vector<double> values, std::vector<ImplPtr> inputs,
              MakeBackward&& make_backward) {
    Tensor out(std::move(shape), std::move(values));
    Tape* tape = Tape::active();
    const bool any = std::any_of(inputs.begin(), inputs.end(), wants_grad);
    if (tape != nullptr && any) {
        auto out_impl = out.impl();
        out_impl->requires_grad = true;
        out_impl->is_leaf = false;
        tape->record(Tape::Node{inputs, out_impl, make_backward(out_impl)});
    }
    return out;
}

inline double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus_scalar(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Which operand (if any) is broadcast, per the trailing-dimension rule.
enum class Broadcast { none, rhs, lhs };

inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline Broadcast broadcast_kind(const Shape& a, const Shape& b) {
    if (a == b) return Broadcast::none;
    if (shape_numel(b) == 1 || is_suffix(b, a)) return Broadcast::rhs;
    if (shape_numel(a) == 1 || is_suffix(a, b)) return Broadcast::lhs;
    throw ShapeError("binary: shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
}

}  // namespace detail

inline double sigmoid(double x) { return detail::sigmoid_scalar(x); }

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor unary(UnaryOp op, const Tensor& x) {
    const auto xs = x.data();
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double v = xs[i];
        switch (op) {
            case UnaryOp::sigmoid: out[i] = detail::sigmoid_scalar(v); break;
            case UnaryOp::log:
                if (!(v > 0)) throw DomainError("log: non-positive input " + std::to_string(v));
                out[i] = std::log(v);
                break;
            case UnaryOp::exp: out[i] = std::exp(v); break;
            case UnaryOp::neg: out[i] = -v; break;
            case UnaryOp::abs: out[i] = std::abs(v); break;
            case UnaryOp::relu: out[i] = v > 0 || std::isnan(v) ? v : 0.0; break;
            case UnaryOp::tanh: out[i] = std::tanh(v); break;
            case UnaryOp::square: out[i] = v * v; break;
            case UnaryOp::softplus: out[i] = detail::softplus_scalar(v); break;
            case UnaryOp::lgamma:
                if (!(v > 0)) throw DomainError("lgamma: non-positive input " + std::to_string(v));
                out[i] = std::lgamma(v);
                break;
        }
    }
    auto in = x.impl();
    return detail::finish(x.shape(), std::move(out), {in}, [op, in](detail::ImplPtr o) {
        return [op, in, o] {
            if (!in->requires_grad) return;
            for (std::size_t i = 0; i < o->data.size(); ++i) {
                const double g = o->grad[i];
                const double v = in->data[i];
                const double y = o->data[i];
                double d = 0.0;
                switch (op) {
                    case UnaryOp::sigmoid: d = y * (1.0 - y); break;
                    case UnaryOp::log: d = 1.0 / v; break;
                    case UnaryOp::exp: d = y; break;
                    case UnaryOp::neg: d = -1.0; break;
                    case UnaryOp::abs: d = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); break;
                    case UnaryOp::relu: d = v > 0 ? 1.0 : 0.0; break;
                    case UnaryOp::tanh: d = 1.0 - y * y; break;
                    case UnaryOp::square: d = 2.0 * v; break;
                    case UnaryOp::softplus: d = detail::sigmoid_scalar(v); break;
                    case UnaryOp::lgamma: d = boost::math::digamma(v); break;
                }
                detail::accumulate(in, i, g * d);
            }
        };
    });
}

inline Tensor sigmoid(const Tensor& x) { return unary(UnaryOp::sigmoid, x); }
inline Tensor log(const Tensor& x) { return unary(UnaryOp::log, x); }
inline Tensor exp(const Tensor& x) { return unary(UnaryOp::exp, x); }
inline Tensor neg(const Tensor& x) { return unary(UnaryOp::neg, x); }
inline Tensor abs(const Tensor& x) { return unary(UnaryOp::abs, x); }
// NaN passes through so non-finite inputs reach the loss check.
inline Tensor relu(const Tensor& x) { return unary(UnaryOp::relu, x); }
inline Tensor tanh(const Tensor& x) { return unary(UnaryOp::tanh, x); }
inline Tensor square(const Tensor& x) { return unary(UnaryOp::square, x); }
inline Tensor softplus(const Tensor& x) { return unary(UnaryOp::softplus, x); }
inline Tensor lgamma(const Tensor& x) { return unary(UnaryOp::lgamma, x); }

// Elementwise with broadcasting: either operand may be a scalar or match a
// trailing suffix of the other's shape. Broadcast gradients are summed.
inline Tensor binary(BinaryOp op, const Tensor& a, const Tensor& b) {
    const auto kind = detail::broadcast_kind(a.shape(), b.shape());
    const Shape out_shape = kind == detail::Broadcast::lhs ? b.shape() : a.shape();
    const std::size_t n = shape_numel(out_shape);
    const std::size_t na = a.numel();
    const std::size_t nb = b.numel();
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = ad[i % na];
        const double y = bd[i % nb];
        switch (op) {
            case BinaryOp::add: out[i] = x + y; break;
            case BinaryOp::sub: out[i] = x - y; break;
            case BinaryOp::mul: out[i] = x * y; break;
            case BinaryOp::div: out[i] = x / y; break;
        }
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return detail::finish(out_shape, std::move(out), {ai, bi}, [op, ai, bi](detail::ImplPtr o) {
        return [op, ai, bi, o] {
            const std::size_t n = o->data.size();
            const std::size_t na = ai->data.size();
            const std::size_t nb = bi->data.size();
            for (std::size_t i = 0; i < n; ++i) {
                const double g = o->grad[i];
                const double x = ai->data[i % na];
                const double y = bi->data[i % nb];
                double da = 0.0;
                double db = 0.0;
                switch (op) {
                    case BinaryOp::add: da = g; db = g; break;
                    case BinaryOp::sub: da = g; db = -g; break;
                    case BinaryOp::mul: da = g * y; db = g * x; break;
                    case BinaryOp::div: da = g / y; db = -g * x / (y * y); break;
                }
                if (ai->requires_grad) detail::accumulate(ai, i % na, da);
                if (bi->requires_grad) detail::accumulate(bi, i % nb, db);
            }
        };
    });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return binary(BinaryOp::add, a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return binary(BinaryOp::sub, a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return binary(BinaryOp::mul, a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return binary(BinaryOp::div, a, b); }
inline Tensor operator*(const Tensor& a, double s) { return a * Tensor::scalar(s); }
inline Tensor operator*(double s, const Tensor& a) { return Tensor::scalar(s) * a; }
inline Tensor operator+(const Tensor& a, double s) { return a + Tensor::scalar(s); }
inline Tensor operator-(const Tensor& a, double s) { return a - Tensor::scalar(s); }
inline Tensor operator-(double s, const Tensor& a) { return Tensor::scalar(s) - a; }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Linear algebra and shape manipulation

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bd[p * n + j];
        }
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return detail::finish(Shape{m, n}, std::move(out), {ai, bi}, [ai, bi, m, k, n](detail::ImplPtr o) {
        return [ai, bi, o, m, k, n] {
            const auto& g = o->grad;
            if (ai->requires_grad) {
                // dA = dC * B^T
                ai->ensure_grad();
                ai->grad_touched = true;
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bi->data[p * n + j];
                        ai->grad[i * k + p] += s;
                    }
                }
            }
            if (bi->requires_grad) {
                // dB = A^T * dC
                bi->ensure_grad();
                bi->grad_touched = true;
                for (std::size_t p = 0; p < k; ++p) {
                    for (std::size_t i = 0; i < m; ++i) {
                        const double av = ai->data[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) bi->grad[p * n + j] += av * g[i * n + j];
                    }
                }
            }
        };
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_str(a.shape()));
    const std::size_t r = a.dim(0), c = a.dim(1);
    const auto ad = a.data();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
    }
    auto ai = a.impl();
    return detail::finish(Shape{c, r}, std::move(out), {ai}, [ai, r, c](detail::ImplPtr o) {
        return [ai, o, r, c] {
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) detail::accumulate(ai, i * c + j, o->grad[j * r + i]);
            }
        };
    });
}

inline Tensor reshape(const Tensor& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    auto ai = a.impl();
    return detail::finish(shape, std::vector<double>(a.data().begin(), a.data().end()), {ai},
                          [ai](detail::ImplPtr o) {
                              return [ai, o] {
                                  for (std::size_t i = 0; i < o->grad.size(); ++i) {
                                      detail::accumulate(ai, i, o->grad[i]);
                                  }
                              };
                          });
}

// Rows [begin, end) along axis 0.
inline Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
    if (a.rank() == 0 || begin >= end || end > a.dim(0)) {
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(a.shape()));
    }
    const std::size_t inner = a.numel() / a.dim(0);
    Shape shape = a.shape();
    shape[0] = end - begin;
    const auto ad = a.data();
    std::vector<double> out(ad.begin() + begin * inner, ad.begin() + end * inner);
    auto ai = a.impl();
    const std::size_t offset = begin * inner;
    return detail::finish(shape, std::move(out), {ai}, [ai, offset](detail::ImplPtr o) {
        return [ai, o, offset] {
            for (std::size_t i = 0; i < o->grad.size(); ++i) detail::accumulate(ai, offset + i, o->grad[i]);
        };
    });
}

// Sub-tensor at `index` along axis 0 (drops that axis).
inline Tensor select(const Tensor& a, std::size_t index) {
    if (a.rank() == 0 || index >= a.dim(0)) {
        throw ShapeError("select: index " + std::to_string(index) + " out of range for " + shape_str(a.shape()));
    }
    Shape tail(a.shape().begin() + 1, a.shape().end());
    return reshape(slice(a, index, index + 1), tail);
}

// Stacks equally shaped tensors along a new leading axis.
inline Tensor stack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("stack: no inputs");
    const Shape& inner = parts.front().shape();
    std::vector<double> out;
    std::vector<detail::ImplPtr> inputs;
    for (const auto& p : parts) {
        if (p.shape() != inner) throw ShapeError("stack: mismatched shapes");
        out.insert(out.end(), p.data().begin(), p.data().end());
        inputs.push_back(p.impl());
    }
    Shape shape{parts.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    const std::size_t block = shape_numel(inner);
    return detail::finish(shape, std::move(out), inputs, [inputs, block](detail::ImplPtr o) {
        return [inputs, block, o] {
            for (std::size_t p = 0; p < inputs.size(); ++p) {
                if (!inputs[p]->requires_grad) continue;
                for (std::size_t i = 0; i < block; ++i) detail::accumulate(inputs[p], i, o->grad[p * block + i]);
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor reduce(ReduceOp op, const Tensor& x, std::optional<std::size_t> axis = std::nullopt) {
    auto xi = x.impl();
    if (!axis) {
        double s = 0.0;
        for (double v : x.data()) s += v;
        const double scale = op == ReduceOp::mean ? 1.0 / static_cast<double>(x.numel()) : 1.0;
        return detail::finish(Shape{}, {s * scale}, {xi}, [xi, scale](detail::ImplPtr o) {
            return [xi, o, scale] {
                const double g = o->grad[0] * scale;
                for (std::size_t i = 0; i < xi->data.size(); ++i) detail::accumulate(xi, i, g);
            };
        });
    }
    const std::size_t ax = *axis;
    if (ax >= x.rank()) {
        throw ShapeError("reduce: axis " + std::to_string(ax) + " out of range for " + shape_str(x.shape()));
    }
    const Shape& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[ax];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != ax) out_shape.push_back(s[i]);
    }
    const double scale = op == ReduceOp::mean ? 1.0 / static_cast<double>(len) : 1.0;
    const auto xd = x.data();
    std::vector<double> out(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t l = 0; l < len; ++l) {
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xd[(o * len + l) * inner + i];
        }
    }
    for (auto& v : out) v *= scale;
    return detail::finish(out_shape, std::move(out), {xi}, [xi, outer, len, inner, scale](detail::ImplPtr r) {
        return [xi, r, outer, len, inner, scale] {
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t l = 0; l < len; ++l) {
                    for (std::size_t i = 0; i < inner; ++i) {
                        detail::accumulate(xi, (o * len + l) * inner + i, r->grad[o * inner + i] * scale);
                    }
                }
            }
        };
    });
}

inline Tensor sum(const Tensor& x, std::optional<std::size_t> axis = std::nullopt) {
    return reduce(ReduceOp::sum, x, axis);
}
inline Tensor mean(const Tensor& x, std::optional<std::size_t> axis = std::nullopt) {
    return reduce(ReduceOp::mean, x, axis);
}

}  // namespace skillnet
