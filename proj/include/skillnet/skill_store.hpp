#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "skillnet/errors.hpp"
#include "skillnet/ops.hpp"
#include "skillnet/tensor.hpp"

namespace skillnet {

// Dense inventory: theta_i = base + sum_j w_j phi[j].
struct DenseSkills {
    Tensor phi;   // [S, d]
    Tensor base;  // [d]

    std::size_t num_skills() const { return phi.dim(0); }
    std::size_t dim() const { return phi.dim(1); }
};

// LT-SFT style inventory. Until a mask is selected phi is trained densely;
// afterwards only phi * mask contributes.
struct SparseSkills {
    Tensor phi;                 // [S, d]
    Tensor base;                // [d]
    std::optional<Tensor> mask; // [S, d], 0/1 constant
    double sparsity = 0.9;
    // Rows appended after freezing; trained densely until their own selection.
    std::vector<std::size_t> pending_rows;

    std::size_t num_skills() const { return phi.dim(0); }
    std::size_t dim() const { return phi.dim(1); }
    bool frozen() const { return mask.has_value(); }
};

// Low-rank inventory for a linear map R^i -> R^o.
struct LowRankSkills {
    Tensor A;   // [S, o, r], zero-initialised
    Tensor B;   // [S, r, i]
    Tensor W0;  // [o, i]
    Tensor b0;  // [o]

    std::size_t num_skills() const { return A.dim(0); }
    std::size_t out_dim() const { return A.dim(1); }
    std::size_t rank() const { return A.dim(2); }
    std::size_t in_dim() const { return B.dim(2); }
};

namespace detail {

inline void check_weights(const Tensor& w, std::size_t skills, const char* who) {
    if (w.rank() != 1 || w.dim(0) != skills) {
        throw ShapeError(std::string(who) + ": weights " + shape_str(w.shape()) + " do not match " +
                         std::to_string(skills) + " skills");
    }
}

inline Tensor weighted_rows(const Tensor& w, const Tensor& rows) {
    return reshape(matmul(reshape(w, {1, w.dim(0)}), rows), {rows.dim(1)});
}

}  // namespace detail

inline Tensor compose_dense(const DenseSkills& skills, const Tensor& w) {
    detail::check_weights(w, skills.num_skills(), "compose_dense");
    if (skills.base.rank() != 1 || skills.base.dim(0) != skills.dim()) {
        throw ShapeError("compose_dense: base does not match skill dimension");
    }
    return skills.base + detail::weighted_rows(w, skills.phi);
}

// Number of entries kept per skill row at the given sparsity.
inline std::size_t sparse_keep_count(std::size_t d, double sparsity) {
    if (!(sparsity >= 0.0 && sparsity < 1.0)) throw DomainError("sparsity must lie in [0, 1)");
    const auto k = static_cast<std::size_t>(std::llround((1.0 - sparsity) * static_cast<double>(d)));
    return std::clamp<std::size_t>(k, 1, d);
}

// Per skill row, 1 at the k indices with the largest |after - before|;
// ties go to the lower index.
inline Tensor select_sparse_mask(const Tensor& phi_before, const Tensor& phi_after, std::size_t k) {
    if (phi_before.shape() != phi_after.shape() || phi_before.rank() != 2) {
        throw ShapeError("select_sparse_mask: mismatched parameter snapshots");
    }
    const std::size_t rows = phi_before.dim(0);
    const std::size_t d = phi_before.dim(1);
    if (k < 1 || k > d) throw ContractError("select_sparse_mask: k must lie in [1, d]");
    std::vector<double> mask(rows * d, 0.0);
    std::vector<std::size_t> order(d);
    std::vector<double> delta(d);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) delta[c] = std::abs(phi_after.at(r, c) - phi_before.at(r, c));
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              return delta[a] != delta[b] ? delta[a] > delta[b] : a < b;
                          });
        for (std::size_t i = 0; i < k; ++i) mask[r * d + order[i]] = 1.0;
    }
    return Tensor(Shape{rows, d}, std::move(mask));
}

// Freezes the mask from the warm-up snapshot and zeroes the masked entries.
inline void freeze_sparse_mask(SparseSkills& skills, const Tensor& phi_before) {
    const std::size_t k = sparse_keep_count(skills.dim(), skills.sparsity);
    Tensor mask = select_sparse_mask(phi_before, skills.phi, k);
    auto values = skills.phi.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] *= mask[i];
    skills.mask = std::move(mask);
}

inline Tensor effective_phi(const SparseSkills& skills) {
    if (!skills.mask) return skills.phi;
    return skills.phi * *skills.mask;
}

inline Tensor compose_sparse(const SparseSkills& skills, const Tensor& w) {
    if (!skills.mask) throw StateError("compose_sparse: mask has not been selected");
    detail::check_weights(w, skills.num_skills(), "compose_sparse");
    return skills.base + detail::weighted_rows(w, effective_phi(skills));
}

// Coordinate storage of a frozen sparse inventory.
struct SparseCoo {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint64_t> indices;  // flat row-major positions
    std::vector<double> values;
};

inline SparseCoo to_coo(const SparseSkills& skills) {
    if (!skills.mask) throw StateError("to_coo: mask has not been selected");
    SparseCoo coo{skills.num_skills(), skills.dim(), {}, {}};
    for (std::size_t i = 0; i < skills.phi.numel(); ++i) {
        if ((*skills.mask)[i] != 0.0) {
            coo.indices.push_back(i);
            coo.values.push_back(skills.phi[i]);
        }
    }
    return coo;
}

// ---------------------------------------------------------------------------
// Low-rank path

namespace detail {

inline void check_lora(const LowRankSkills& s) {
    if (s.A.rank() != 3 || s.B.rank() != 3 || s.W0.rank() != 2 || s.b0.rank() != 1) {
        throw ShapeError("lora: malformed parameter ranks");
    }
    const std::size_t o = s.A.dim(1), r = s.A.dim(2), i = s.B.dim(2);
    if (s.B.dim(0) != s.A.dim(0) || s.B.dim(1) != r || s.W0.dim(0) != o || s.W0.dim(1) != i || s.b0.dim(0) != o) {
        throw ShapeError("lora: inconsistent dimensions (A " + shape_str(s.A.shape()) + ", B " +
                         shape_str(s.B.shape()) + ", W0 " + shape_str(s.W0.shape()) + ")");
    }
    if (r > std::min(o, i)) throw ShapeError("lora: rank exceeds min(out, in)");
}

// Accepts [i] or [n, i]; returns the batch form and whether it was a vector.
inline std::pair<Tensor, bool> as_batch(const Tensor& x, std::size_t in_dim) {
    if (x.rank() == 1) {
        if (x.dim(0) != in_dim) throw ShapeError("lora: input width mismatch");
        return {reshape(x, {1, in_dim}), true};
    }
    if (x.rank() != 2 || x.dim(1) != in_dim) throw ShapeError("lora: input width mismatch");
    return {x, false};
}

}  // namespace detail

// Delta = sum_j w_j A_j B_j, shape [o, i].
inline Tensor lora_delta(const LowRankSkills& s, const Tensor& w) {
    detail::check_lora(s);
    detail::check_weights(w, s.num_skills(), "lora");
    Tensor delta;
    for (std::size_t j = 0; j < s.num_skills(); ++j) {
        Tensor term = matmul(select(s.A, j), select(s.B, j)) * select(w, j);
        delta = delta.defined() ? delta + term : term;
    }
    return delta;
}

// y = W0 x + sum_j w_j A_j (B_j x) + b0, never forming the o x i delta.
inline Tensor lora_forward(const Tensor& x, const LowRankSkills& s, const Tensor& w) {
    detail::check_lora(s);
    detail::check_weights(w, s.num_skills(), "lora");
    auto [batch, was_vector] = detail::as_batch(x, s.in_dim());
    Tensor y = matmul(batch, transpose(s.W0));
    for (std::size_t j = 0; j < s.num_skills(); ++j) {
        Tensor low = matmul(matmul(batch, transpose(select(s.B, j))), transpose(select(s.A, j)));
        y = y + low * select(w, j);
    }
    y = y + s.b0;
    return was_vector ? reshape(y, {s.out_dim()}) : y;
}

// y = (W0 + Delta) x + b0 with Delta materialised.
inline Tensor lora_forward_materialised(const Tensor& x, const LowRankSkills& s, const Tensor& w) {
    auto [batch, was_vector] = detail::as_batch(x, s.in_dim());
    Tensor weight = s.W0 + lora_delta(s, w);
    Tensor y = matmul(batch, transpose(weight)) + s.b0;
    return was_vector ? reshape(y, {s.out_dim()}) : y;
}

// Parameters LoRA adds to a transformer with l layers, hidden size h and rank
// r: four attention projections, each with A and B plus one allocation cell
// per task.
inline std::uint64_t param_count_lora(std::uint64_t layers, std::uint64_t hidden, std::uint64_t rank,
                                      std::uint64_t num_tasks, std::uint64_t num_skills) {
    return 4 * layers * (2 * hidden * rank + num_tasks) * num_skills;
}

}  // namespace skillnet
