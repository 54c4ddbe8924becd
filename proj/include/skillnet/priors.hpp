#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "skillnet/allocation.hpp"
#include "skillnet/errors.hpp"
#include "skillnet/ops.hpp"

namespace skillnet {

struct IbpConfig {
    double alpha = 5.0;
    double strength = 0.0;  // lambda; 0 disables the regulariser
};

inline double harmonic(std::size_t n) {
    double h = 0.0;
    for (std::size_t k = 1; k <= n; ++k) h += 1.0 / static_cast<double>(k);
    return h;
}

namespace detail {

// Sum over distinct non-zero column patterns of log(K_h!).
inline double ibp_history_term(const BinaryMatrix& z) {
    std::map<std::vector<std::uint8_t>, std::size_t> histories;
    for (std::size_t j = 0; j < z.cols(); ++j) {
        if (z.column_sum(j) > 0) ++histories[z.column(j)];
    }
    double total = 0.0;
    for (const auto& [pattern, count] : histories) total += std::lgamma(static_cast<double>(count) + 1.0);
    return total;
}

inline double harmonic_sum(std::size_t tasks) {
    double total = 0.0;
    for (std::size_t i = 1; i <= tasks; ++i) total += harmonic(i);
    return total;
}

inline void check_alpha(double alpha) {
    if (!(alpha > 0)) throw DomainError("ibp: alpha must be positive");
}

}  // namespace detail

// log p(Z | alpha) under the Indian Buffet Process. Empty columns are left out
// of the skill count and of the per-skill sum.
inline double ibp_log_prob(const BinaryMatrix& z, double alpha) {
    detail::check_alpha(alpha);
    const std::size_t tasks = z.rows();
    const double t = static_cast<double>(tasks);
    std::size_t active = 0;
    double per_skill = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) {
        const std::size_t m = z.column_sum(j);
        if (m == 0) continue;
        ++active;
        const double md = static_cast<double>(m);
        per_skill += std::lgamma(t - md + 1.0) + std::lgamma(md) - std::lgamma(t + 1.0);
    }
    return static_cast<double>(active) * std::log(alpha) - detail::ibp_history_term(z) -
           alpha * detail::harmonic_sum(tasks) + per_skill;
}

// Continuous extension of log p(Z | alpha) on relaxed allocations: column
// sums come from z_hat, factorials become log-gamma, and the set of active
// columns plus the history term come from the hardened matrix (no gradient).
inline Tensor ibp_relaxed_log_prob(const Tensor& z_hat, double alpha) {
    detail::check_alpha(alpha);
    const BinaryMatrix hard = harden(z_hat);
    const std::size_t tasks = z_hat.dim(0);
    const double t = static_cast<double>(tasks);
    std::vector<double> include(z_hat.dim(1), 0.0);
    std::size_t active = 0;
    for (std::size_t j = 0; j < hard.cols(); ++j) {
        if (hard.column_sum(j) > 0) {
            include[j] = 1.0;
            ++active;
        }
    }
    const double constant = static_cast<double>(active) * std::log(alpha) - detail::ibp_history_term(hard) -
                            alpha * detail::harmonic_sum(tasks) - static_cast<double>(active) * std::lgamma(t + 1.0);
    if (active == 0) return Tensor::scalar(constant);
    Tensor m = sum(z_hat, 0);
    // Excluded columns are shifted to 1 so log-gamma stays finite; the mask
    // then drops them.
    Tensor mask = Tensor::vector(include);
    Tensor shift = Tensor::vector([&] {
        std::vector<double> v(include.size());
        for (std::size_t j = 0; j < v.size(); ++j) v[j] = 1.0 - include[j];
        return v;
    }());
    Tensor m_safe = m * mask + shift;
    Tensor terms = (lgamma((t + 1.0) - m_safe) + lgamma(m_safe)) * mask;
    return sum(terms) + constant;
}

// Loss term: -strength * relaxed log-prior.
inline Tensor ibp_regularizer(const Tensor& z_hat, double alpha, double strength) {
    if (!(strength >= 0)) throw DomainError("ibp_regularizer: strength must be non-negative");
    return ibp_relaxed_log_prob(z_hat, alpha) * (-strength);
}

inline Tensor ibp_regularizer(const RelaxedAllocation& a, double alpha, double strength) {
    return ibp_regularizer(a.z_hat, alpha, strength);
}

}  // namespace skillnet
