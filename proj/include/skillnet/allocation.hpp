#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "skillnet/errors.hpp"
#include "skillnet/ops.hpp"
#include "skillnet/rng.hpp"
#include "skillnet/tensor.hpp"

namespace skillnet {

// Uniform draws are clamped to [kUniformClamp, 1 - kUniformClamp] so that
// logit(u) stays finite.
inline constexpr double kUniformClamp = 1e-7;

// Dense 0/1 matrix, rows = tasks, columns = skills.
class BinaryMatrix {
  public:
    BinaryMatrix() = default;
    BinaryMatrix(std::size_t rows, std::size_t cols, std::uint8_t value = 0)
        : rows_(rows), cols_(cols), cells_(rows * cols, value ? 1 : 0) {}

    static BinaryMatrix from_rows(const std::vector<std::vector<int>>& rows) {
        if (rows.empty()) return {};
        BinaryMatrix m(rows.size(), rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != m.cols_) throw ShapeError("binary matrix: ragged rows");
            for (std::size_t j = 0; j < m.cols_; ++j) {
                if (rows[i][j] != 0 && rows[i][j] != 1) throw DomainError("binary matrix: entries must be 0 or 1");
                m.set(i, j, rows[i][j] != 0);
            }
        }
        return m;
    }

    static BinaryMatrix identity(std::size_t n) {
        BinaryMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.set(i, i, true);
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool at(std::size_t i, std::size_t j) const { return cells_.at(i * cols_ + j) != 0; }
    void set(std::size_t i, std::size_t j, bool v) { cells_.at(i * cols_ + j) = v ? 1 : 0; }

    std::size_t row_sum(std::size_t i) const {
        std::size_t s = 0;
        for (std::size_t j = 0; j < cols_; ++j) s += at(i, j);
        return s;
    }
    std::size_t column_sum(std::size_t j) const {
        std::size_t s = 0;
        for (std::size_t i = 0; i < rows_; ++i) s += at(i, j);
        return s;
    }
    std::vector<std::uint8_t> column(std::size_t j) const {
        std::vector<std::uint8_t> c(rows_);
        for (std::size_t i = 0; i < rows_; ++i) c[i] = at(i, j);
        return c;
    }
    std::vector<std::uint8_t> row(std::size_t i) const {
        return {cells_.begin() + static_cast<std::ptrdiff_t>(i * cols_),
                cells_.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols_)};
    }

    BinaryMatrix with_row(const std::vector<std::uint8_t>& r) const {
        if (rows_ != 0 && r.size() != cols_) throw ShapeError("binary matrix: appended row has wrong width");
        BinaryMatrix m = *this;
        if (rows_ == 0) m.cols_ = r.size();
        m.cells_.insert(m.cells_.end(), r.begin(), r.end());
        ++m.rows_;
        return m;
    }

    Tensor to_tensor() const {
        std::vector<double> v(cells_.begin(), cells_.end());
        return Tensor(Shape{rows_, cols_}, std::move(v));
    }

    bool operator==(const BinaryMatrix&) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> cells_;
};

struct AllocationLogits {
    Tensor z;  // [num_tasks, num_skills]
    std::size_t layer_id = 0;

    std::size_t num_tasks() const { return z.dim(0); }
    std::size_t num_skills() const { return z.dim(1); }
};

struct RelaxedAllocation {
    Tensor z_hat;  // entries in (0, 1)
    double tau = 1.0;
    std::vector<double> draws;  // u per cell; empty for the deterministic path
};

inline AllocationLogits init_logits(std::size_t num_tasks, std::size_t num_skills, double init_value = 0.0,
                                    std::size_t layer_id = 0) {
    if (num_tasks == 0 || num_skills == 0) throw ShapeError("init_logits: counts must be >= 1");
    AllocationLogits logits{Tensor::constant({num_tasks, num_skills}, init_value), layer_id};
    logits.z.set_requires_grad(true);
    return logits;
}

inline double clamp_uniform(double u) { return std::clamp(u, kUniformClamp, 1.0 - kUniformClamp); }

inline void check_tau(double tau) {
    if (!(tau > 0)) throw DomainError("allocation: temperature must be positive");
}

// sigma((z + logit(u)) / tau) for a fixed noise tensor u of the same shape as z;
// algebraically identical to sigma(log[sigma(z) u / ((1 - sigma(z))(1 - u))]^(1/tau)).
// Differentiable in z with u held fixed.
inline Tensor gumbel_sigmoid(const Tensor& z, double tau, const std::vector<double>& draws) {
    check_tau(tau);
    if (draws.size() != z.numel()) throw ShapeError("gumbel_sigmoid: one draw per cell required");
    std::vector<double> noise(draws.size());
    for (std::size_t i = 0; i < draws.size(); ++i) {
        const double u = clamp_uniform(draws[i]);
        noise[i] = std::log(u) - std::log1p(-u);
    }
    return sigmoid((z + Tensor(z.shape(), std::move(noise))) * (1.0 / tau));
}

inline std::vector<double> draw_uniforms(Rng& rng, std::size_t n) {
    std::vector<double> u(n);
    for (auto& v : u) v = clamp_uniform(rng.uniform());
    return u;
}

inline RelaxedAllocation gumbel_sigmoid_sample(const AllocationLogits& logits, double tau, std::uint64_t seed) {
    check_tau(tau);
    Rng rng(seed);
    auto draws = draw_uniforms(rng, logits.z.numel());
    Tensor z_hat = gumbel_sigmoid(logits.z, tau, draws);
    return {std::move(z_hat), tau, std::move(draws)};
}

// One relaxed row for `task`, drawing |S| uniforms from rng.
inline Tensor gumbel_sigmoid_row(const AllocationLogits& logits, std::size_t task, double tau, Rng& rng) {
    auto draws = draw_uniforms(rng, logits.num_skills());
    return gumbel_sigmoid(select(logits.z, task), tau, draws);
}

// The u = 0.5 path: sigma(z / tau). Used whenever a deterministic allocation
// is needed (evaluation, metrics).
inline RelaxedAllocation expected_allocation(const AllocationLogits& logits, double tau) {
    check_tau(tau);
    return {sigmoid(logits.z * (1.0 / tau)), tau, {}};
}

inline Tensor expected_row(const AllocationLogits& logits, std::size_t task, double tau) {
    check_tau(tau);
    return sigmoid(select(logits.z, task) * (1.0 / tau));
}

inline constexpr double kDegenerateRowSum = 1e-12;

// Row vector [S] divided by its sum.
inline Tensor normalize_row(const Tensor& row) {
    double total = 0.0;
    for (double v : row.data()) total += v;
    if (!(total >= kDegenerateRowSum)) throw DegenerateError("normalize_rows: row sum below 1e-12");
    return row / sum(row);
}

// weights[i, j] = z_hat[i, j] / sum_j z_hat[i, j].
inline Tensor normalize_rows(const Tensor& z_hat) {
    if (z_hat.rank() != 2) throw ShapeError("normalize_rows: expected a matrix");
    for (std::size_t i = 0; i < z_hat.dim(0); ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < z_hat.dim(1); ++j) total += z_hat.at(i, j);
        if (!(total >= kDegenerateRowSum)) {
            throw DegenerateError("normalize_rows: row " + std::to_string(i) + " sums below 1e-12");
        }
    }
    // Column-wise broadcast through the transpose: [S,T] / [T].
    Tensor t = transpose(z_hat);
    return transpose(t / sum(z_hat, 1));
}

inline Tensor normalize_rows(const RelaxedAllocation& a) { return normalize_rows(a.z_hat); }

// Rounds each cell at 0.5 (0.5 rounds up).
inline BinaryMatrix harden(const Tensor& z_hat) {
    if (z_hat.rank() != 2) throw ShapeError("harden: expected a matrix");
    BinaryMatrix b(z_hat.dim(0), z_hat.dim(1));
    for (std::size_t i = 0; i < b.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) b.set(i, j, z_hat.at(i, j) >= 0.5);
    }
    return b;
}

inline BinaryMatrix harden(const RelaxedAllocation& a) { return harden(a.z_hat); }

// ---------------------------------------------------------------------------
// Analysis metrics on a [T, S] matrix of probabilities.

namespace detail {

inline void check_unit_interval(const Tensor& z, const char* who) {
    if (z.rank() != 2) throw ShapeError(std::string(who) + ": expected a matrix");
    for (double v : z.data()) {
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError(std::string(who) + ": entry outside [0,1]");
    }
}

inline double xlogx(double p) { return p > 0 ? p * std::log(p) : 0.0; }

}  // namespace detail

// Mean binary entropy of the cells, in units of log 2.
inline double metric_discreteness(const Tensor& z_hat) {
    detail::check_unit_interval(z_hat, "metric_discreteness");
    double total = 0.0;
    for (double p : z_hat.data()) total += -(detail::xlogx(p) + detail::xlogx(1.0 - p));
    return total / (static_cast<double>(z_hat.numel()) * std::numbers::ln2);
}

// Fraction of cells rounding to 1.
inline double metric_sparsity(const Tensor& z_hat) {
    if (z_hat.rank() != 2) throw ShapeError("metric_sparsity: expected a matrix");
    double active = 0.0;
    for (double p : z_hat.data()) active += p >= 0.5 ? 1.0 : 0.0;
    return active / static_cast<double>(z_hat.numel());
}

// Normalised entropy of the column-sum distribution; 1 when |S| = 1.
inline double metric_usage(const Tensor& z_hat) {
    detail::check_unit_interval(z_hat, "metric_usage");
    const std::size_t skills = z_hat.dim(1);
    std::vector<double> cols(skills, 0.0);
    for (std::size_t i = 0; i < z_hat.dim(0); ++i) {
        for (std::size_t j = 0; j < skills; ++j) cols[j] += z_hat.at(i, j);
    }
    double total = 0.0;
    for (double c : cols) total += c;
    if (!(total > 0)) throw DegenerateError("metric_usage: all column sums are zero");
    if (skills == 1) return 1.0;
    double h = 0.0;
    for (double c : cols) h -= detail::xlogx(c / total);
    return h / std::log(static_cast<double>(skills));
}

// Temperature schedule: constant by default, optionally linear from tau to
// tau_final over `steps`.
struct TauSchedule {
    double tau = 1.0;
    std::optional<double> tau_final;
    std::size_t steps = 0;

    double at(std::size_t step) const {
        if (!tau_final || steps == 0) return tau;
        const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(steps));
        return tau + (*tau_final - tau) * frac;
    }
};

}  // namespace skillnet
