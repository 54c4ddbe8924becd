#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "skillnet/benchmark.hpp"
#include "skillnet/model.hpp"
#include "skillnet/optim.hpp"
#include "skillnet/priors.hpp"
#include "skillnet/tape.hpp"

namespace skillnet {

struct TrainConfig {
    std::size_t steps = 1000;
    std::size_t batch_size = 32;
    double lr_z = 0.1;
    double lr_phi = 1e-3;
    TauSchedule tau{};
    double alpha = 5.0;
    double ibp_strength = 0.0;
    std::size_t mask_warmup_steps = 100;
    std::size_t eval_interval = 0;  // 0: no periodic evaluation
    bool select_best_dev = false;
    // Independent initialisations; the one with the lowest final dev loss is kept.
    std::size_t restarts = 1;
    std::uint64_t seed = 0;
};

struct HistoryRow {
    std::size_t step = 0;
    std::size_t task_id = 0;
    double loss = 0.0;
    double reg_loss = 0.0;
    double lr_z = 0.0;
    double lr_phi = 0.0;
};

struct CurvePoint {
    std::size_t step = 0;  // optimiser steps taken before the evaluation
    double train_loss = 0.0;
    double dev_loss = 0.0;
};

struct TrainedModel {
    MultitaskModel model;
    std::vector<HistoryRow> history;
    std::vector<CurvePoint> curve;
    std::size_t selected_step = 0;
    std::size_t selected_restart = 0;
    std::vector<double> restart_dev_losses;
};

struct EvalMetrics {
    double loss = 0.0;
    std::optional<double> mse;       // regression
    std::optional<double> accuracy;  // classification

    bool operator==(const EvalMetrics&) const = default;
};

// Steps for a number of passes over the pooled training examples.
inline std::size_t steps_for_epochs(std::size_t epochs, const std::vector<TaskSpec>& tasks, std::size_t batch_size) {
    if (batch_size == 0) throw ContractError("steps_for_epochs: batch size must be positive");
    std::size_t examples = 0;
    for (const auto& t : tasks) examples += t.train.size();
    return epochs * ((examples + batch_size - 1) / batch_size);
}

namespace detail {

inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    if (x.rank() == 1) {
        std::vector<double> v(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) v[i] = x[rows[i]];
        return Tensor(Shape{rows.size()}, std::move(v));
    }
    const std::size_t d = x.dim(1);
    std::vector<double> v(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                    v.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return Tensor(Shape{rows.size(), d}, std::move(v));
}

// min(k, n) distinct indices in draw order (partial Fisher-Yates).
inline std::vector<std::size_t> sample_indices(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const std::size_t m = std::min(k, n);
    for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
    idx.resize(m);
    return idx;
}

// Mean squared error, or mean logistic loss on logits p with labels y.
inline Tensor task_loss(const Tensor& pred, const Tensor& y, TaskKind kind) {
    if (pred.shape() != y.shape()) {
        throw ShapeError("loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(y.shape()));
    }
    if (kind == TaskKind::regression) return mean(square(pred - y));
    return mean(softplus(pred) - y * pred);
}

inline Tensor allocation_regulariser(const MultitaskModel& model, double tau, double alpha, double strength) {
    Tensor total;
    if (strength == 0.0 || !model.has_learned_allocation()) return total;
    for (std::size_t a = 0; a < model.num_allocations(); ++a) {
        Tensor r = ibp_regularizer(expected_allocation(*model.allocation(a).logits, tau), alpha, strength);
        total = total.defined() ? total + r : r;
    }
    return total;
}

inline void zero_all_grads(const MultitaskModel& model) {
    for (auto p : model.parameters()) p.tensor.zero_grad();
}

[[noreturn]] inline void abort_non_finite(std::size_t step, const std::string& task, double loss, double reg) {
    std::ostringstream os;
    os << "non-finite loss at step " << step << " on task '" << task << "' (task loss " << loss << ", regulariser "
       << reg << ")";
    throw TrainingError(os.str());
}

}  // namespace detail

// Deterministic metrics on a split through the expected allocation path.
inline EvalMetrics evaluate(const MultitaskModel& model, std::size_t task, const Split& split, TaskKind kind,
                            double tau = 1.0) {
    if (split.size() == 0) throw ContractError("evaluate: empty evaluation split");
    Tape::Pause pause;
    const Tensor pred = model.forward(task, split.x, AllocMode::expected(tau));
    EvalMetrics m;
    m.loss = detail::task_loss(pred, split.y, kind).item();
    if (kind == TaskKind::regression) {
        m.mse = m.loss;
    } else {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < pred.numel(); ++i) correct += (pred[i] > 0.0) == (split.y[i] > 0.5);
        m.accuracy = static_cast<double>(correct) / static_cast<double>(pred.numel());
    }
    return m;
}

inline EvalMetrics evaluate(const MultitaskModel& model, const TaskSpec& task, double tau = 1.0) {
    const auto idx = model.task_index(task.id);
    if (!idx) throw LookupError("evaluate: model has no task '" + task.id + "'");
    return evaluate(model, *idx, task.eval, task.kind, tau);
}

namespace detail {

inline double mean_split_loss(const MultitaskModel& model, const std::vector<TaskSpec>& tasks, bool dev, double tau) {
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const Split& s = dev ? tasks[i].dev : tasks[i].train;
        if (s.size() == 0) continue;
        total += evaluate(model, i, s, tasks[i].kind, tau).loss;
        ++counted;
    }
    return counted ? total / static_cast<double>(counted) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

// Trains `model` in place; task i of the model is tasks[i].
// Per step: uniform task, batch without replacement, one relaxed allocation
// row per layer, task loss plus optional IBP term, two-speed Adam.
inline TrainedModel train_model(MultitaskModel model, const std::vector<TaskSpec>& tasks, const TrainConfig& cfg) {
    if (tasks.empty()) throw ContractError("multitask_train: need at least one training task");
    if (tasks.size() != model.num_tasks()) throw ContractError("multitask_train: task list does not match the model");
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (tasks[i].train.size() == 0) throw ContractError("multitask_train: task '" + tasks[i].id + "' has no data");
        if (model.task_names()[i] != tasks[i].id) throw ContractError("multitask_train: task order mismatch");
    }
    if (cfg.batch_size == 0) throw ContractError("multitask_train: batch size must be positive");

    OptimizerGroups groups = build_two_speed_groups(model.parameters(), cfg.lr_z, cfg.lr_phi);
    Adam adam = groups.make_adam();
    const double lr_z = groups.group_z.params.empty() ? 0.0 : cfg.lr_z;

    Rng task_rng(derive_seed(cfg.seed, 11));
    Rng batch_rng(derive_seed(cfg.seed, 12));
    Rng gumbel_rng(derive_seed(cfg.seed, 13));

    TrainedModel out;
    out.history.reserve(cfg.steps);
    std::optional<MultitaskModel> warmup_start;
    if (model.has_unfrozen_sparse()) warmup_start = model.clone();
    const std::size_t freeze_at = std::min(cfg.mask_warmup_steps, cfg.steps);

    std::optional<MultitaskModel> best;
    double best_dev = std::numeric_limits<double>::infinity();
    auto checkpoint = [&](std::size_t step) {
        const double tau = cfg.tau.at(step);
        CurvePoint p{step, detail::mean_split_loss(model, tasks, false, tau), detail::mean_split_loss(model, tasks, true, tau)};
        out.curve.push_back(p);
        if (cfg.select_best_dev && std::isfinite(p.dev_loss) && p.dev_loss < best_dev) {
            best_dev = p.dev_loss;
            best = model.clone();
            out.selected_step = step;
        }
    };

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (warmup_start && step == freeze_at) {
            model.freeze_masks(*warmup_start);
            warmup_start.reset();
        }
        if (cfg.eval_interval > 0 && step % cfg.eval_interval == 0) checkpoint(step);

        const std::size_t task = task_rng.index(tasks.size());
        const Split& data = tasks[task].train;
        const auto rows = detail::sample_indices(batch_rng, data.size(), cfg.batch_size);
        const Tensor x = detail::gather_rows(data.x, rows);
        const Tensor y = detail::gather_rows(data.y, rows);
        const double tau = cfg.tau.at(step);

        adam.zero_grad();
        Tape tape;
        double loss_value = 0.0;
        double reg_value = 0.0;
        {
            Tape::Scope scope(tape);
            Tensor loss = detail::task_loss(model.forward(task, x, AllocMode::sample(tau), &gumbel_rng), y, tasks[task].kind);
            Tensor reg = detail::allocation_regulariser(model, tau, cfg.alpha, cfg.ibp_strength);
            loss_value = loss.item();
            reg_value = reg.defined() ? reg.item() : 0.0;
            if (!std::isfinite(loss_value) || !std::isfinite(reg_value)) {
                detail::abort_non_finite(step, tasks[task].id, loss_value, reg_value);
            }
            tape.backward(reg.defined() ? loss + reg : loss);
        }
        adam.step();
        model.apply_masks();
        out.history.push_back({step, task, loss_value, reg_value, lr_z, cfg.lr_phi});
    }
    if (warmup_start) model.freeze_masks(*warmup_start);
    if (cfg.eval_interval > 0) checkpoint(cfg.steps);
    if (best) {
        model.load_values_from(*best);
    } else {
        out.selected_step = cfg.steps;
    }
    out.model = std::move(model);
    return out;
}

inline std::vector<std::string> task_ids(const std::vector<TaskSpec>& tasks) {
    std::vector<std::string> names;
    for (const auto& t : tasks) names.push_back(t.id);
    return names;
}

// Restart r > 0 reseeds both the initialisation and the sampling streams.
inline std::uint64_t restart_seed(std::uint64_t seed, std::size_t restart) {
    return restart == 0 ? seed : derive_seed(seed, 40 + restart);
}

inline TrainedModel multitask_train(const TrainConfig& cfg, const std::vector<TaskSpec>& tasks, const ModelSpec& spec) {
    if (tasks.empty()) throw ContractError("multitask_train: need at least one training task");
    if (cfg.restarts == 0) throw ContractError("multitask_train: restarts must be positive");
    std::optional<TrainedModel> best;
    std::vector<double> dev_losses;
    double best_dev = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
        TrainConfig run = cfg;
        run.seed = restart_seed(cfg.seed, r);
        TrainedModel tm = train_model(MultitaskModel(spec, task_ids(tasks), derive_seed(run.seed, 10)), tasks, run);
        const double dev = detail::mean_split_loss(tm.model, tasks, true, cfg.tau.at(cfg.steps));
        dev_losses.push_back(dev);
        if (!best || dev < best_dev) {
            best_dev = dev;
            tm.selected_restart = r;
            best = std::move(tm);
        }
    }
    best->restart_dev_losses = std::move(dev_losses);
    return std::move(*best);
}

// First curve step whose mean train loss is at or below `threshold`.
inline std::optional<std::size_t> steps_to_threshold(const std::vector<CurvePoint>& curve, double threshold) {
    for (const auto& p : curve) {
        if (p.train_loss <= threshold) return p.step;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Few-shot adaptation

struct AdaptConfig {
    std::size_t steps = 1000;
    std::size_t k_shot = 16;
    std::size_t batch_size = 8;
    std::size_t z_only_steps = 100;  // first phase: allocation row (or embedding) only
    bool train_phi = true;           // false: allocation row only, throughout
    double lr_z = 0.1;
    double lr_phi = 1e-3;
    double tau = 1.0;
    std::size_t mask_warmup_steps = 100;
    std::uint64_t seed = 0;
};

struct AdaptResult {
    MultitaskModel model;
    std::size_t task_index = 0;
    EvalMetrics before;
    EvalMetrics after;
    std::vector<double> losses;  // per step, on the sampled batch
    Split support;               // the k-shot examples
};

namespace detail {

struct AdaptParams {
    std::vector<Tensor> fast;        // trained from step 0
    std::vector<Tensor> slow;        // joined after z_only_steps
    std::vector<double> fast_lr;
    std::vector<double> slow_lr;
};

// Allocation rows and hypernet embeddings adapt from step 0; their skills or
// generators join after the first phase (if train_phi). Fixed-allocation
// kinds adapt their skills throughout.
inline AdaptParams adaptation_params(const MultitaskModel& model, const AdaptConfig& cfg) {
    AdaptParams p;
    const bool two_phase = model.has_learned_allocation() || model.kind() == ModelKind::hypernet;
    for (const auto& np : model.parameters()) {
        switch (np.role) {
            case ParamRole::allocation:
                p.fast.push_back(np.tensor);
                p.fast_lr.push_back(cfg.lr_z);
                break;
            case ParamRole::embedding:
                p.fast.push_back(np.tensor);
                p.fast_lr.push_back(cfg.lr_phi);
                break;
            case ParamRole::skill:
            case ParamRole::generator:
                if (!two_phase) {
                    p.fast.push_back(np.tensor);
                    p.fast_lr.push_back(cfg.lr_phi);
                } else if (cfg.train_phi) {
                    p.slow.push_back(np.tensor);
                    p.slow_lr.push_back(cfg.lr_phi);
                }
                break;
            case ParamRole::base: break;
        }
    }
    return p;
}

}  // namespace detail

// Adapts a copy of `trained` to an unseen task from k_shot training examples
// and evaluates it on the task's eval split. Base parameters stay frozen.
inline AdaptResult few_shot_adapt(const MultitaskModel& trained, const TaskSpec& task, const AdaptConfig& cfg,
                                  const std::optional<std::vector<std::size_t>>& expert_skills = std::nullopt) {
    if (trained.task_index(task.id)) {
        throw ContractError("few_shot_adapt: task '" + task.id + "' collides with a training task");
    }
    if (cfg.k_shot > 32) throw ContractError("few_shot_adapt: k_shot must not exceed 32");
    if (cfg.k_shot > task.train.size()) throw ContractError("few_shot_adapt: not enough training examples");

    AdaptResult r;
    r.model = trained.clone();
    MultitaskModel& model = r.model;
    r.task_index = model.add_task(task.id, derive_seed(cfg.seed, 21),
                                  expert_skills ? expert_skills : task.planted_skills);
    const std::size_t t = r.task_index;

    Rng support_rng(derive_seed(cfg.seed, 22));
    const auto chosen = detail::sample_indices(support_rng, task.train.size(), cfg.k_shot);
    r.support = {detail::gather_rows(task.train.x, chosen), detail::gather_rows(task.train.y, chosen)};

    std::optional<MultitaskModel> warmup_start;
    if (model.has_unfrozen_sparse()) warmup_start = model.clone();
    r.before = evaluate(model, t, task.eval, task.kind, cfg.tau);
    if (cfg.k_shot == 0 || cfg.steps == 0) {
        r.after = r.before;
        return r;
    }

    auto params = detail::adaptation_params(model, cfg);
    std::vector<ParamGroup> groups;
    for (std::size_t i = 0; i < params.fast.size(); ++i) {
        groups.push_back({"fast" + std::to_string(i), {params.fast[i]}, params.fast_lr[i]});
    }
    for (std::size_t i = 0; i < params.slow.size(); ++i) {
        groups.push_back({"slow" + std::to_string(i), {params.slow[i]}, params.slow_lr[i]});
    }
    Adam adam(std::move(groups));

    Rng batch_rng(derive_seed(cfg.seed, 23));
    Rng gumbel_rng(derive_seed(cfg.seed, 24));
    const std::size_t freeze_at = std::min(cfg.mask_warmup_steps, cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (warmup_start && step == freeze_at) {
            model.freeze_masks(*warmup_start);
            warmup_start.reset();
        }
        const auto rows = detail::sample_indices(batch_rng, r.support.size(), cfg.batch_size);
        const Tensor x = detail::gather_rows(r.support.x, rows);
        const Tensor y = detail::gather_rows(r.support.y, rows);
        detail::zero_all_grads(model);
        Tape tape;
        double loss_value = 0.0;
        {
            Tape::Scope scope(tape);
            Tensor loss = detail::task_loss(model.forward(t, x, AllocMode::sample(cfg.tau), &gumbel_rng), y, task.kind);
            loss_value = loss.item();
            if (!std::isfinite(loss_value)) detail::abort_non_finite(step, task.id, loss_value, 0.0);
            tape.backward(loss);
        }
        if (step < cfg.z_only_steps) {
            for (auto& p : params.slow) p.zero_grad();
        }
        adam.step();
        model.apply_masks();
        r.losses.push_back(loss_value);
    }
    if (warmup_start) model.freeze_masks(*warmup_start);
    r.after = evaluate(model, t, task.eval, task.kind, cfg.tau);
    return r;
}

}  // namespace skillnet
