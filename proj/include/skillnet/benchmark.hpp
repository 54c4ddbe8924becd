#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "skillnet/allocation.hpp"
#include "skillnet/errors.hpp"
#include "skillnet/rng.hpp"
#include "skillnet/tensor.hpp"

namespace skillnet {

enum class TaskKind { regression, classification };

inline std::string to_string(TaskKind k) { return k == TaskKind::regression ? "regression" : "classification"; }

inline TaskKind task_kind_from_string(const std::string& s) {
    if (s == "regression") return TaskKind::regression;
    if (s == "classification" || s == "binary-classification") return TaskKind::classification;
    throw LookupError("unknown task type '" + s + "'");
}

struct Split {
    Tensor x;  // [n, input_dim]
    Tensor y;  // [n]; {0, 1} labels for classification

    std::size_t size() const { return x.defined() ? x.dim(0) : 0; }
};

struct TaskSpec {
    std::string id;
    TaskKind kind = TaskKind::regression;
    Split train;
    Split dev;
    Split eval;
    std::optional<std::vector<std::size_t>> planted_skills;
};

struct BenchmarkConfig {
    std::uint64_t seed = 0;
    std::size_t num_tasks = 16;
    std::size_t num_true_skills = 4;
    std::size_t input_dim = 16;
    std::size_t examples_per_task = 64;
    std::size_t dev_examples = 32;
    std::size_t eval_examples = 64;
    double noise_sigma = 0.0;
    std::size_t min_skills_per_task = 1;
    std::size_t max_skills_per_task = 3;
    TaskKind kind = TaskKind::regression;
    std::size_t num_heldout_tasks = 4;
    double base_scale = 1.0;
};

struct SyntheticWorld {
    BinaryMatrix true_Z;     // training tasks x true skills
    BinaryMatrix heldout_Z;  // held-out tasks x true skills
    Tensor true_skills;      // [S*, input_dim], unit-norm rows
    Tensor true_base;        // [input_dim]
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    // base + mean of the active skill rows.
    std::vector<double> task_vector(const std::vector<std::uint8_t>& row) const {
        const std::size_t d = true_base.numel();
        std::vector<double> w(true_base.data().begin(), true_base.data().end());
        std::size_t active = 0;
        for (auto v : row) active += v;
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (!row[j]) continue;
            for (std::size_t c = 0; c < d; ++c) w[c] += true_skills.at(j, c) / static_cast<double>(active);
        }
        return w;
    }
};

inline std::string task_name(std::size_t i, bool heldout) {
    char buf[32];
    std::snprintf(buf, sizeof buf, heldout ? "heldout_%02zu" : "task_%02zu", i);
    return buf;
}

// True when no row is empty, no column is empty and columns are pairwise distinct.
inline bool valid_planted_allocation(const BinaryMatrix& z) {
    for (std::size_t i = 0; i < z.rows(); ++i) {
        if (z.row_sum(i) == 0) return false;
    }
    std::set<std::vector<std::uint8_t>> cols;
    for (std::size_t j = 0; j < z.cols(); ++j) {
        if (z.column_sum(j) == 0) return false;
        if (!cols.insert(z.column(j)).second) return false;
    }
    return true;
}

namespace detail {

inline std::vector<double> unit_vector(Rng& rng, std::size_t d) {
    std::vector<double> v(d);
    double norm = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

inline std::vector<std::uint8_t> random_subset_row(Rng& rng, std::size_t skills, std::size_t lo, std::size_t hi) {
    const std::size_t size = lo + rng.index(hi - lo + 1);
    std::vector<std::size_t> idx(skills);
    for (std::size_t i = 0; i < skills; ++i) idx[i] = i;
    for (std::size_t i = 0; i < size; ++i) std::swap(idx[i], idx[i + rng.index(skills - i)]);
    std::vector<std::uint8_t> row(skills, 0);
    for (std::size_t i = 0; i < size; ++i) row[idx[i]] = 1;
    return row;
}

inline Split make_split(Rng& rng, const std::vector<double>& w, std::size_t n, double sigma, TaskKind kind) {
    const std::size_t d = w.size();
    std::vector<double> xs(n * d);
    std::vector<double> ys(n);
    for (std::size_t r = 0; r < n; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double v = rng.normal();
            xs[r * d + c] = v;
            dot += v * w[c];
        }
        const double noisy = dot + (sigma > 0 ? sigma * rng.normal() : 0.0);
        ys[r] = kind == TaskKind::regression ? noisy : (noisy > 0 ? 1.0 : 0.0);
    }
    return {Tensor(Shape{n, d}, std::move(xs)), Tensor(Shape{n}, std::move(ys))};
}

inline TaskSpec make_task(const SyntheticWorld& world, const BenchmarkConfig& cfg, const std::string& name,
                          const std::vector<std::uint8_t>& row, std::uint64_t seed) {
    const auto w = world.task_vector(row);
    Rng rng(seed);
    TaskSpec t;
    t.id = name;
    t.kind = cfg.kind;
    t.train = make_split(rng, w, cfg.examples_per_task, cfg.noise_sigma, cfg.kind);
    t.dev = make_split(rng, w, cfg.dev_examples, cfg.noise_sigma, cfg.kind);
    t.eval = make_split(rng, w, cfg.eval_examples, cfg.noise_sigma, cfg.kind);
    std::vector<std::size_t> planted;
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j]) planted.push_back(j);
    }
    t.planted_skills = planted;
    return t;
}

}  // namespace detail

struct Benchmark {
    SyntheticWorld world;
    std::vector<TaskSpec> train_tasks;
    std::vector<TaskSpec> heldout_tasks;
};

// Planted world: unit-norm true skills, a valid random allocation, and linear
// tasks y = x . (base + mean of active skills) + noise (or its sign).
// Held-out tasks use unions of training-task subsets, preferring ones that
// no training task already has.
inline Benchmark generate_synthetic_benchmark(const BenchmarkConfig& cfg) {
    if (cfg.num_true_skills == 0 || cfg.num_tasks == 0 || cfg.input_dim == 0) {
        throw ContractError("benchmark: counts must be positive");
    }
    if (cfg.num_true_skills > cfg.num_tasks) throw ContractError("benchmark: more true skills than tasks");
    if (cfg.min_skills_per_task < 1 || cfg.min_skills_per_task > cfg.max_skills_per_task ||
        cfg.max_skills_per_task > cfg.num_true_skills) {
        throw ContractError("benchmark: skills-per-task range must lie within [1, num_true_skills]");
    }
    if (cfg.examples_per_task == 0 || cfg.eval_examples == 0) throw ContractError("benchmark: empty splits");

    Benchmark b;
    SyntheticWorld& world = b.world;
    world.seed = cfg.seed;
    world.noise_sigma = cfg.noise_sigma;

    Rng skill_rng(derive_seed(cfg.seed, 1));
    std::vector<double> skills;
    for (std::size_t j = 0; j < cfg.num_true_skills; ++j) {
        auto v = detail::unit_vector(skill_rng, cfg.input_dim);
        skills.insert(skills.end(), v.begin(), v.end());
    }
    world.true_skills = Tensor(Shape{cfg.num_true_skills, cfg.input_dim}, std::move(skills));
    auto base = detail::unit_vector(skill_rng, cfg.input_dim);
    for (auto& v : base) v *= cfg.base_scale;
    world.true_base = Tensor(Shape{cfg.input_dim}, std::move(base));

    Rng z_rng(derive_seed(cfg.seed, 2));
    bool found = false;
    for (int attempt = 0; attempt < 1000 && !found; ++attempt) {
        BinaryMatrix z;
        for (std::size_t i = 0; i < cfg.num_tasks; ++i) {
            z = z.with_row(detail::random_subset_row(z_rng, cfg.num_true_skills, cfg.min_skills_per_task,
                                                     cfg.max_skills_per_task));
        }
        if (valid_planted_allocation(z)) {
            world.true_Z = std::move(z);
            found = true;
        }
    }
    if (!found) throw GenerationError("benchmark: no valid planted allocation after 1000 resamples");

    std::set<std::vector<std::uint8_t>> seen;
    for (std::size_t i = 0; i < cfg.num_tasks; ++i) seen.insert(world.true_Z.row(i));
    Rng h_rng(derive_seed(cfg.seed, 3));
    world.heldout_Z = BinaryMatrix(0, cfg.num_true_skills);
    for (std::size_t h = 0; h < cfg.num_heldout_tasks; ++h) {
        std::vector<std::uint8_t> row;
        for (int attempt = 0; attempt < 200; ++attempt) {
            row = world.true_Z.row(h_rng.index(cfg.num_tasks));
            const auto other = world.true_Z.row(h_rng.index(cfg.num_tasks));
            for (std::size_t j = 0; j < row.size(); ++j) row[j] = row[j] | other[j];
            if (!seen.contains(row)) break;
        }
        seen.insert(row);
        world.heldout_Z = world.heldout_Z.with_row(row);
    }

    for (std::size_t i = 0; i < cfg.num_tasks; ++i) {
        b.train_tasks.push_back(detail::make_task(world, cfg, task_name(i, false), world.true_Z.row(i),
                                                  derive_seed(cfg.seed, 1000 + i)));
    }
    for (std::size_t h = 0; h < cfg.num_heldout_tasks; ++h) {
        b.heldout_tasks.push_back(detail::make_task(world, cfg, task_name(h, true), world.heldout_Z.row(h),
                                                    derive_seed(cfg.seed, 5000 + h)));
    }
    return b;
}

// Population MSE of the best single linear predictor over the training tasks
// (isotropic inputs): mean_i ||w_i - mean w||^2 + sigma^2.
inline double shared_oracle_mse(const SyntheticWorld& world) {
    const std::size_t tasks = world.true_Z.rows();
    const std::size_t d = world.true_base.numel();
    std::vector<std::vector<double>> ws;
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < tasks; ++i) {
        ws.push_back(world.task_vector(world.true_Z.row(i)));
        for (std::size_t c = 0; c < d; ++c) mean[c] += ws.back()[c] / static_cast<double>(tasks);
    }
    double total = 0.0;
    for (const auto& w : ws) {
        for (std::size_t c = 0; c < d; ++c) total += (w[c] - mean[c]) * (w[c] - mean[c]);
    }
    return total / static_cast<double>(tasks) + world.noise_sigma * world.noise_sigma;
}

}  // namespace skillnet
