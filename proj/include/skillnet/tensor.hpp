#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "skillnet/errors.hpp"
#include "skillnet/rng.hpp"

namespace skillnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool is_leaf = true;
    // Set whenever something accumulates into grad; cleared by zero_grad.
    bool grad_touched = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

namespace fill {
struct Zeros {};
struct Constant {
    double value;
};
struct Uniform {
    double lo;
    double hi;
    std::uint64_t seed;
};
// Bound sqrt(6 / fan_in), fan_in taken as the last dimension.
struct KaimingUniform {
    std::uint64_t seed;
};
}  // namespace fill

using FillRule = std::variant<fill::Zeros, fill::Constant, fill::Uniform, fill::KaimingUniform>;

// Shared handle to a dense row-major float64 buffer. Copies alias the same
// storage; use clone() for an independent copy.
class Tensor {
  public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values) {
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        }
        impl_ = std::make_shared<detail::TensorImpl>();
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
    }

    static Tensor make(const Shape& shape, const FillRule& rule) {
        for (auto d : shape) {
            if (d == 0) throw ShapeError("tensor: zero dimension in shape " + shape_str(shape));
        }
        std::vector<double> values(shape_numel(shape), 0.0);
        std::visit(
            [&](const auto& r) {
                using R = std::decay_t<decltype(r)>;
                if constexpr (std::is_same_v<R, fill::Constant>) {
                    std::fill(values.begin(), values.end(), r.value);
                } else if constexpr (std::is_same_v<R, fill::Uniform>) {
                    Rng rng(r.seed);
                    for (auto& v : values) v = rng.uniform(r.lo, r.hi);
                } else if constexpr (std::is_same_v<R, fill::KaimingUniform>) {
                    const double fan_in = shape.empty() ? 1.0 : static_cast<double>(shape.back());
                    const double bound = std::sqrt(6.0 / fan_in);
                    Rng rng(r.seed);
                    for (auto& v : values) v = rng.uniform(-bound, bound);
                }
            },
            rule);
        return Tensor(shape, std::move(values));
    }

    static Tensor zeros(const Shape& shape) { return make(shape, fill::Zeros{}); }
    static Tensor constant(const Shape& shape, double c) { return make(shape, fill::Constant{c}); }
    static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
    static Tensor vector(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor(Shape{n}, std::move(v));
    }
    static Tensor matrix(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) throw ShapeError("tensor: empty matrix");
        const std::size_t cols = rows.front().size();
        std::vector<double> flat;
        flat.reserve(rows.size() * cols);
        for (const auto& r : rows) {
            if (r.size() != cols) throw ShapeError("tensor: ragged matrix rows");
            flat.insert(flat.end(), r.begin(), r.end());
        }
        return Tensor(Shape{rows.size(), cols}, std::move(flat));
    }

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const double> data() const { return impl_->data; }
    // Direct write access, intended for optimisers and parameter surgery on leaves.
    std::span<double> mutable_data() { return impl_->data; }

    double item() const {
        if (numel() != 1) throw ContractError("tensor: item() on tensor of shape " + shape_str(shape()));
        return impl_->data[0];
    }
    double operator[](std::size_t flat_index) const { return impl_->data.at(flat_index); }
    double at(std::size_t row, std::size_t col) const {
        return impl_->data.at(row * impl_->shape.at(1) + col);
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        impl_->requires_grad = on;
        return *this;
    }
    bool is_leaf() const { return impl_->is_leaf; }

    bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->grad.empty(); }
    bool grad_touched() const { return impl_->grad_touched; }
    // Zero-filled view when no gradient has been accumulated yet.
    std::vector<double> grad() const {
        if (has_grad()) return impl_->grad;
        return std::vector<double>(numel(), 0.0);
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
        impl_->grad_touched = false;
    }

    // Independent leaf with the same values; requires_grad carried over.
    Tensor clone() const {
        Tensor t(impl_->shape, impl_->data);
        t.impl_->requires_grad = impl_->requires_grad;
        return t;
    }
    // Independent constant leaf.
    Tensor detach() const { return Tensor(impl_->shape, impl_->data); }

    bool same_as(const Tensor& other) const noexcept { return impl_ == other.impl_; }
    const void* id() const noexcept { return impl_.get(); }

    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

  private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Spec-level constructor name.
inline Tensor tensor_new(const Shape& shape, const FillRule& rule) { return Tensor::make(shape, rule); }

inline bool all_finite(const Tensor& t) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace skillnet
