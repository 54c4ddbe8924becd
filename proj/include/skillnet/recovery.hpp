#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "skillnet/allocation.hpp"
#include "skillnet/errors.hpp"

namespace skillnet {

struct RecoveryScore {
    // assignment[j] = learned column matched to true column j.
    std::vector<std::size_t> assignment;
    double cell_accuracy = 0.0;
};

namespace detail {

// agree[j][k] = rows where true column j equals learned column k.
inline std::vector<std::vector<long>> column_agreement(const BinaryMatrix& learned, const BinaryMatrix& truth) {
    std::vector<std::vector<long>> agree(truth.cols(), std::vector<long>(learned.cols(), 0));
    for (std::size_t j = 0; j < truth.cols(); ++j) {
        for (std::size_t k = 0; k < learned.cols(); ++k) {
            long n = 0;
            for (std::size_t i = 0; i < truth.rows(); ++i) n += truth.at(i, j) == learned.at(i, k);
            agree[j][k] = n;
        }
    }
    return agree;
}

inline void check_recovery_args(const BinaryMatrix& learned, const BinaryMatrix& truth) {
    if (learned.rows() != truth.rows()) throw ShapeError("skill_recovery_score: row counts differ");
    if (learned.cols() < truth.cols()) {
        throw ContractError("skill_recovery_score: learned inventory smaller than the true one");
    }
    if (truth.cols() == 0 || truth.rows() == 0) throw ContractError("skill_recovery_score: empty truth");
}

inline RecoveryScore finish_score(std::vector<std::size_t> assignment, long agreed, const BinaryMatrix& truth) {
    return {std::move(assignment),
            static_cast<double>(agreed) / static_cast<double>(truth.rows() * truth.cols())};
}

}  // namespace detail

// Number of injective maps from true to learned columns.
inline double injective_map_count(std::size_t true_cols, std::size_t learned_cols) {
    double n = 1.0;
    for (std::size_t i = 0; i < true_cols; ++i) n *= static_cast<double>(learned_cols - i);
    return n;
}

// Exhaustive search over injective column maps; first best in lexicographic order.
inline RecoveryScore recovery_exhaustive(const BinaryMatrix& learned, const BinaryMatrix& truth) {
    detail::check_recovery_args(learned, truth);
    const auto agree = detail::column_agreement(learned, truth);
    const std::size_t n = truth.cols();
    const std::size_t m = learned.cols();
    std::vector<std::size_t> current(n), best;
    std::vector<bool> used(m, false);
    long best_total = -1;
    auto search = [&](auto&& self, std::size_t j, long total) -> void {
        if (j == n) {
            if (total > best_total) {
                best_total = total;
                best = current;
            }
            return;
        }
        for (std::size_t k = 0; k < m; ++k) {
            if (used[k]) continue;
            used[k] = true;
            current[j] = k;
            self(self, j + 1, total + agree[j][k]);
            used[k] = false;
        }
    };
    search(search, 0, 0);
    return detail::finish_score(std::move(best), best_total, truth);
}

// Rectangular Hungarian assignment (true columns as rows), maximising agreement.
inline RecoveryScore recovery_hungarian(const BinaryMatrix& learned, const BinaryMatrix& truth) {
    detail::check_recovery_args(learned, truth);
    const auto agree = detail::column_agreement(learned, truth);
    const std::size_t n = truth.cols();
    const std::size_t m = learned.cols();
    const long rows = static_cast<long>(truth.rows());
    // cost[j][k] = disagreements; potentials method with 1-based indices.
    constexpr long kInf = std::numeric_limits<long>::max() / 4;
    std::vector<long> u(n + 1, 0), v(m + 1, 0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<long> minv(m + 1, kInf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            long delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const long cur = (rows - agree[i0 - 1][j - 1]) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> assignment(n);
    long total = 0;
    for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] != 0) {
            assignment[p[j] - 1] = j - 1;
            total += agree[p[j] - 1][j - 1];
        }
    }
    return detail::finish_score(std::move(assignment), total, truth);
}

inline constexpr double kExhaustiveMapLimit = 5e6;

// Best cell agreement between the true allocation and the learned one over
// injective column assignments. Exhaustive search when |S*| <= 8 and the
// search space is small, Hungarian assignment otherwise.
inline RecoveryScore skill_recovery_score(const BinaryMatrix& learned, const BinaryMatrix& truth) {
    detail::check_recovery_args(learned, truth);
    if (truth.cols() <= 8 && injective_map_count(truth.cols(), learned.cols()) <= kExhaustiveMapLimit) {
        return recovery_exhaustive(learned, truth);
    }
    return recovery_hungarian(learned, truth);
}

}  // namespace skillnet
