#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "skillnet/benchmark.hpp"
#include "skillnet/checkpoint.hpp"
#include "skillnet/config.hpp"
#include "skillnet/csv.hpp"
#include "skillnet/hierarchy.hpp"
#include "skillnet/recovery.hpp"
#include "skillnet/trainer.hpp"

namespace skillnet {

namespace fs = std::filesystem;

inline constexpr const char* kOutputRootEnv = "SKILLNET_OUTPUT_ROOT";

struct RunOptions {
    fs::path output_root = "runs";
    bool reuse = false;  // keep an existing successful run instead of recomputing
};

struct RunRecord {
    ExperimentConfig config;
    std::string hash;
    fs::path dir;
    bool ok = false;
    bool reused = false;
    std::string error;
    Json summary;
};

// Precedence: explicit root, then the environment, then output_dir, then "runs".
inline fs::path resolve_output_root(const ExperimentConfig& c, const std::optional<std::string>& explicit_root) {
    if (explicit_root) return *explicit_root;
    if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
    if (c.output_dir) return *c.output_dir;
    return "runs";
}

inline std::string run_id(const ExperimentConfig& c) { return "run-" + config_hash(c); }

// ---------------------------------------------------------------------------
// Allocation documents

inline Json allocation_json(const MultitaskModel& model, std::size_t slot) {
    const LayerAllocation& a = model.allocation(slot);
    Json j;
    j["tasks"] = model.task_names();
    j["skills"] = model.num_skills();
    j["layer"] = slot;
    if (a.logits) {
        Json rows = Json::array();
        const Tensor& z = a.logits->z;
        for (std::size_t i = 0; i < z.dim(0); ++i) {
            Json row = Json::array();
            for (std::size_t k = 0; k < z.dim(1); ++k) row.push_back(z.at(i, k));
            rows.push_back(row);
        }
        j["logits"] = rows;
    } else {
        j["logits"] = nullptr;
        Json rows = Json::array();
        for (std::size_t i = 0; i < a.fixed->rows(); ++i) {
            Json row = Json::array();
            for (std::size_t k = 0; k < a.fixed->cols(); ++k) row.push_back(a.fixed->at(i, k) ? 1 : 0);
            rows.push_back(row);
        }
        j["matrix"] = rows;
    }
    return j;
}

struct AllocationDoc {
    std::vector<std::string> tasks;
    std::size_t layer = 0;
    BinaryMatrix hardened;
};

// Reads an allocation document; logits harden at sigmoid(z) >= 0.5, i.e. z >= 0.
inline AllocationDoc allocation_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("tasks") || !j["tasks"].is_array()) {
        throw ContractError("allocation document: 'tasks' array required");
    }
    AllocationDoc doc;
    for (const auto& t : j["tasks"]) doc.tasks.push_back(t.get<std::string>());
    if (j.contains("layer")) doc.layer = j["layer"].get<std::size_t>();
    const bool has_logits = j.contains("logits") && !j["logits"].is_null();
    const Json& rows = has_logits ? j["logits"] : j.at("matrix");
    if (!rows.is_array() || rows.size() != doc.tasks.size()) {
        throw ShapeError("allocation document: one row per task required");
    }
    for (const auto& row : rows) {
        std::vector<std::uint8_t> r;
        for (const auto& v : row) {
            const double x = v.get<double>();
            r.push_back(has_logits ? (x >= 0.0 ? 1 : 0) : (x >= 0.5 ? 1 : 0));
        }
        doc.hardened = doc.hardened.with_row(r);
    }
    return doc;
}

inline csv::Table binary_matrix_table(const BinaryMatrix& z, const std::vector<std::string>& names) {
    csv::Table t;
    t.header.push_back("task");
    for (std::size_t j = 0; j < z.cols(); ++j) t.header.push_back("skill_" + std::to_string(j));
    for (std::size_t i = 0; i < z.rows(); ++i) {
        csv::Row row{names.at(i)};
        for (std::size_t j = 0; j < z.cols(); ++j) row.push_back(z.at(i, j) ? "1" : "0");
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline csv::Table history_table(const std::vector<HistoryRow>& history) {
    csv::Table t{{"step", "task_id", "loss", "reg_loss", "lr_z", "lr_phi"}, {}};
    for (const auto& h : history) {
        t.rows.push_back({std::to_string(h.step), std::to_string(h.task_id), csv::format_double(h.loss),
                          csv::format_double(h.reg_loss), csv::format_double(h.lr_z), csv::format_double(h.lr_phi)});
    }
    return t;
}

inline csv::Table curve_table(const std::vector<CurvePoint>& curve) {
    csv::Table t{{"step", "train_loss", "dev_loss"}, {}};
    for (const auto& p : curve) {
        t.rows.push_back({std::to_string(p.step), csv::format_double(p.train_loss), csv::format_double(p.dev_loss)});
    }
    return t;
}

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

inline Json metrics_json(const EvalMetrics& m) {
    Json j;
    j["loss"] = m.loss;
    if (m.mse) j["mse"] = *m.mse;
    if (m.accuracy) j["accuracy"] = *m.accuracy;
    return j;
}

inline Json optional_json(const std::optional<std::size_t>& v) { return v ? Json(*v) : Json(nullptr); }

inline std::string row_string(const std::vector<std::uint8_t>& row) { return subset_key(row); }

inline void write_json(const fs::path& path, const Json& j) { csv::write_file(path.string(), j.dump(2) + "\n"); }

inline Json read_json(const fs::path& path) {
    try {
        return Json::parse(csv::read_file(path.string()));
    } catch (const nlohmann::json::parse_error& e) {
        throw ContractError("malformed JSON in '" + path.string() + "': " + e.what());
    }
}

// Expert skill subset for a held-out task: configured table first, planted truth otherwise.
inline std::optional<std::vector<std::size_t>> heldout_expert_skills(const ExperimentConfig& c, const TaskSpec& t) {
    if (c.expert_table) {
        if (const auto* s = c.expert_table->find(t.id)) return *s;
    }
    return t.planted_skills;
}

}  // namespace detail

// Generate world, train, evaluate, adapt, score, persist. Every output except
// timing.json is a deterministic function of the configuration.
inline RunRecord run_experiment(const ExperimentConfig& config, const RunOptions& options = {}) {
    using Clock = std::chrono::steady_clock;
    RunRecord rec;
    rec.config = config;
    rec.hash = config_hash(config);
    rec.dir = options.output_root / run_id(config);
    const fs::path& dir = rec.dir;

    if (options.reuse && fs::exists(dir / "summary.json")) {
        Json previous = detail::read_json(dir / "summary.json");
        if (previous.value("status", "") == "ok") {
            rec.ok = true;
            rec.reused = true;
            rec.summary = std::move(previous);
            return rec;
        }
    }

    std::string stage = "setup";
    Json timing;
    std::vector<std::string> files;
    try {
        validate_config(config);
        fs::create_directories(dir);
        detail::write_json(dir / "config.json", config_to_json(config));
        files.push_back("config.json");

        stage = "generate";
        const Benchmark bench = generate_synthetic_benchmark(benchmark_config(config));
        const auto names = task_ids(bench.train_tasks);

        stage = "train";
        ModelSpec spec = model_spec(config);
        if (spec.kind == ModelKind::expert && !spec.expert_table) {
            spec.expert_table = expert_table_from_matrix(bench.world.true_Z, names);
        }
        TrainConfig tc = train_config(config, bench.train_tasks);
        auto t0 = Clock::now();
        TrainedModel trained = multitask_train(tc, bench.train_tasks, spec);
        timing["train_seconds"] = std::chrono::duration<double>(Clock::now() - t0).count();
        const MultitaskModel& model = trained.model;
        const double final_tau = tc.tau.at(tc.steps);

        csv::write_table((dir / "history.csv").string(), history_table(trained.history));
        csv::write_table((dir / "curve.csv").string(), curve_table(trained.curve));
        files.push_back("history.csv");
        files.push_back("curve.csv");

        stage = "evaluate";
        Json per_task = Json::object();
        std::vector<double> train_losses;
        for (const auto& t : bench.train_tasks) {
            const EvalMetrics m = evaluate(model, t, final_tau);
            per_task[t.id] = detail::metrics_json(m);
            train_losses.push_back(m.loss);
        }

        stage = "few_shot";
        t0 = Clock::now();
        Json few = Json::object();
        std::vector<double> all_losses;
        std::vector<double> all_before;
        Json few_tasks = Json::object();
        for (std::size_t h = 0; h < bench.heldout_tasks.size(); ++h) {
            const TaskSpec& task = bench.heldout_tasks[h];
            std::vector<double> losses, before;
            Json accs = Json::array();
            for (std::size_t r = 0; r < config.few_shot_resamples; ++r) {
                const std::uint64_t seed = derive_seed(derive_seed(config.seed, 3), h * 1000 + r);
                AdaptResult res = few_shot_adapt(model, task, adapt_config(config, final_tau, seed),
                                                 detail::heldout_expert_skills(config, task));
                losses.push_back(res.after.loss);
                before.push_back(res.before.loss);
                if (res.after.accuracy) accs.push_back(*res.after.accuracy);
            }
            Json entry;
            entry["planted_skills"] = task.planted_skills ? Json(*task.planted_skills) : Json(nullptr);
            entry["mean_loss"] = detail::mean(losses);
            entry["median_loss"] = detail::median(losses);
            entry["mean_loss_before"] = detail::mean(before);
            entry["losses"] = losses;
            if (!accs.empty()) entry["accuracies"] = accs;
            few_tasks[task.id] = entry;
            all_losses.insert(all_losses.end(), losses.begin(), losses.end());
            all_before.insert(all_before.end(), before.begin(), before.end());
        }
        timing["few_shot_seconds"] = std::chrono::duration<double>(Clock::now() - t0).count();
        few["k_shot"] = config.k_shot;
        few["steps"] = config.adaptation_steps;
        few["resamples"] = config.few_shot_resamples;
        few["mean_loss"] = all_losses.empty() ? Json(nullptr) : Json(detail::mean(all_losses));
        few["median_loss"] = all_losses.empty() ? Json(nullptr) : Json(detail::median(all_losses));
        few["mean_loss_before"] = all_before.empty() ? Json(nullptr) : Json(detail::mean(all_before));
        few["tasks"] = few_tasks;

        stage = "allocation";
        Json allocations = Json::array();
        for (std::size_t a = 0; a < model.num_allocations(); ++a) {
            const std::string base = "allocation_layer_" + std::to_string(a);
            detail::write_json(dir / (base + ".json"), allocation_json(model, a));
            const Tensor z_hat = model.allocation_matrix(a, final_tau);
            const BinaryMatrix hard = harden(z_hat);
            csv::write_table((dir / (base + ".csv")).string(), binary_matrix_table(hard, names));
            const auto groups = group_tasks(hard, names);
            const std::string hier = "hierarchy_layer_" + std::to_string(a);
            detail::write_json(dir / (hier + ".json"), hierarchy_json(groups));
            csv::write_file((dir / (hier + ".txt")).string(), render_hierarchy(groups));
            files.insert(files.end(), {base + ".json", base + ".csv", hier + ".json", hier + ".txt"});

            Json entry;
            entry["layer"] = a;
            entry["discreteness"] = metric_discreteness(z_hat);
            entry["sparsity"] = metric_sparsity(z_hat);
            entry["usage"] = metric_usage(z_hat);
            if (hard.cols() >= bench.world.true_Z.cols()) {
                const RecoveryScore score = skill_recovery_score(hard, bench.world.true_Z);
                entry["recovery"] = Json{{"cell_accuracy", score.cell_accuracy}, {"assignment", score.assignment}};
            } else {
                entry["recovery"] = nullptr;
            }
            std::vector<std::string> rows;
            for (std::size_t i = 0; i < hard.rows(); ++i) rows.push_back(detail::row_string(hard.row(i)));
            entry["hardened"] = rows;
            allocations.push_back(entry);
        }

        stage = "checkpoint";
        save_checkpoint(model, (dir / "skills.bin").string(), (dir / "skills.json").string());
        files.push_back("skills.bin");
        files.push_back("skills.json");

        stage = "summary";
        std::optional<double> threshold = config.threshold_loss;
        const double oracle = config.task_type == TaskKind::regression ? shared_oracle_mse(bench.world)
                                                                       : std::numeric_limits<double>::quiet_NaN();
        if (!threshold && config.task_type == TaskKind::regression) threshold = config.threshold_factor * oracle;

        Json train;
        train["steps"] = tc.steps;
        train["restarts"] = tc.restarts;
        train["selected_restart"] = trained.selected_restart;
        train["restart_dev_losses"] = trained.restart_dev_losses;
        train["selected_step"] = trained.selected_step;
        train["history_length"] = trained.history.size();
        train["final_train_loss"] = trained.curve.empty() ? Json(nullptr) : Json(trained.curve.back().train_loss);
        train["final_dev_loss"] = trained.curve.empty() ? Json(nullptr) : Json(trained.curve.back().dev_loss);
        train["threshold"] = threshold ? Json(*threshold) : Json(nullptr);
        train["steps_to_threshold"] =
            threshold ? detail::optional_json(steps_to_threshold(trained.curve, *threshold)) : Json(nullptr);
        train["shared_oracle_mse"] = std::isnan(oracle) ? Json(nullptr) : Json(oracle);

        Json world;
        std::vector<std::string> true_rows, heldout_rows;
        for (std::size_t i = 0; i < bench.world.true_Z.rows(); ++i) true_rows.push_back(detail::row_string(bench.world.true_Z.row(i)));
        for (std::size_t i = 0; i < bench.world.heldout_Z.rows(); ++i) {
            heldout_rows.push_back(detail::row_string(bench.world.heldout_Z.row(i)));
        }
        world["true_Z"] = true_rows;
        world["heldout_Z"] = heldout_rows;

        Json s;
        s["status"] = "ok";
        s["run_id"] = run_id(config);
        s["config_hash"] = rec.hash;
        s["model_kind"] = to_string(config.model_kind);
        s["parameterisation"] = to_string(config.parameterisation);
        s["num_skills"] = model.num_skills();
        s["seed"] = config.seed;
        s["world"] = world;
        s["train"] = train;
        s["train_tasks_eval"] = Json{{"mean_loss", detail::mean(train_losses)}, {"tasks", per_task}};
        s["few_shot"] = few;
        s["allocation"] = allocations;
        s["param_counts"] = Json{{"skill", model.skill_param_count()}, {"total", model.total_param_count()}};
        files.push_back("summary.json");
        files.push_back("timing.json");
        s["files"] = files;
        detail::write_json(dir / "summary.json", s);
        detail::write_json(dir / "timing.json", timing);
        rec.summary = std::move(s);
        rec.ok = true;
    } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
        Json s;
        s["status"] = "failed";
        s["run_id"] = run_id(config);
        s["config_hash"] = rec.hash;
        s["stage"] = stage;
        s["error"] = e.what();
        s["files"] = files;
        rec.summary = s;
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (!ec) {
            try {
                detail::write_json(dir / "summary.json", s);
            } catch (const std::exception&) {
            }
        }
    }
    return rec;
}

// Runs independent jobs on up to `parallelism` threads; results keep job order.
inline std::vector<RunRecord> run_many(const std::vector<ExperimentConfig>& configs, const RunOptions& options,
                                       std::size_t parallelism) {
    std::vector<RunRecord> out(configs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) out[i] = run_experiment(configs[i], options);
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(parallelism, configs.size()));
    std::vector<std::thread> threads;
    for (std::size_t t = 1; t < n; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    return out;
}

struct BatchResult {
    std::vector<RunRecord> records;
    fs::path table_path;
    bool all_ok = true;
};

namespace detail {

inline std::string number_or_empty(const Json& v) {
    if (v.is_null()) return "";
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    return csv::format_double(v.get<double>());
}

inline Json at_path(const Json& j, std::initializer_list<const char*> keys) {
    const Json* cur = &j;
    for (const char* k : keys) {
        if (!cur->is_object() || !cur->contains(k)) return nullptr;
        cur = &(*cur)[k];
    }
    return *cur;
}

}  // namespace detail

// One run per |S| grid point plus a combined table of allocation statistics.
inline BatchResult run_sweep(const ExperimentConfig& base, const std::vector<std::size_t>& grid,
                             const RunOptions& options) {
    if (grid.empty()) throw ConfigError("sweep_grid", "empty grid");
    std::vector<ExperimentConfig> configs;
    for (auto s : grid) {
        ExperimentConfig c = base;
        c.num_skills = s;
        c.sweep_grid = grid;
        if (c.expert_table && c.expert_table->num_skills != s) c.expert_table.reset();
        validate_config(c);
        configs.push_back(c);
    }
    BatchResult result;
    result.records = run_many(configs, options, base.parallelism);
    ExperimentConfig tag = base;
    tag.sweep_grid = grid;
    const fs::path dir = options.output_root / ("sweep-" + config_hash(tag));
    fs::create_directories(dir);
    csv::Table t{{"num_skills", "run_id", "status", "layer", "discreteness", "sparsity", "usage", "cell_accuracy",
                  "train_eval_loss", "few_shot_loss"},
                 {}};
    for (std::size_t i = 0; i < result.records.size(); ++i) {
        const RunRecord& r = result.records[i];
        result.all_ok = result.all_ok && r.ok;
        const std::string id = run_id(r.config);
        if (!r.ok) {
            t.rows.push_back({std::to_string(grid[i]), id, "failed", "", "", "", "", "", "", ""});
            continue;
        }
        for (const auto& a : r.summary["allocation"]) {
            t.rows.push_back({std::to_string(grid[i]), id, "ok", std::to_string(a["layer"].get<std::size_t>()),
                              detail::number_or_empty(a["discreteness"]), detail::number_or_empty(a["sparsity"]),
                              detail::number_or_empty(a["usage"]),
                              detail::number_or_empty(detail::at_path(a, {"recovery", "cell_accuracy"})),
                              detail::number_or_empty(detail::at_path(r.summary, {"train_tasks_eval", "mean_loss"})),
                              detail::number_or_empty(detail::at_path(r.summary, {"few_shot", "mean_loss"}))});
        }
    }
    result.table_path = dir / "sweep_metrics.csv";
    csv::write_table(result.table_path.string(), t);
    return result;
}

// One run per model kind on the same world and the same few-shot splits.
inline BatchResult run_compare(const ExperimentConfig& base, const std::vector<ModelKind>& kinds,
                               const RunOptions& options) {
    if (kinds.empty()) throw ConfigError("model_kind", "no model kinds to compare");
    std::vector<ExperimentConfig> configs;
    for (auto k : kinds) {
        ExperimentConfig c = base;
        c.model_kind = k;
        validate_config(c);
        configs.push_back(c);
    }
    BatchResult result;
    result.records = run_many(configs, options, base.parallelism);
    std::string tag = config_hash(base);
    for (auto k : kinds) tag += "-" + to_string(k);
    const fs::path dir = options.output_root / ("compare-" + hex64(fnv1a64(tag)));
    fs::create_directories(dir);
    csv::Table t{{"model_kind", "run_id", "status", "train_eval_loss", "few_shot_mean_loss", "few_shot_median_loss",
                  "steps_to_threshold", "skill_params", "total_params"},
                 {}};
    for (std::size_t i = 0; i < result.records.size(); ++i) {
        const RunRecord& r = result.records[i];
        result.all_ok = result.all_ok && r.ok;
        const std::string id = run_id(r.config);
        if (!r.ok) {
            t.rows.push_back({to_string(kinds[i]), id, "failed", "", "", "", "", "", ""});
            continue;
        }
        const Json& s = r.summary;
        t.rows.push_back({to_string(kinds[i]), id, "ok",
                          detail::number_or_empty(detail::at_path(s, {"train_tasks_eval", "mean_loss"})),
                          detail::number_or_empty(detail::at_path(s, {"few_shot", "mean_loss"})),
                          detail::number_or_empty(detail::at_path(s, {"few_shot", "median_loss"})),
                          detail::number_or_empty(detail::at_path(s, {"train", "steps_to_threshold"})),
                          detail::number_or_empty(detail::at_path(s, {"param_counts", "skill"})),
                          detail::number_or_empty(detail::at_path(s, {"param_counts", "total"}))});
    }
    result.table_path = dir / "compare.csv";
    csv::write_table(result.table_path.string(), t);
    return result;
}

// ---------------------------------------------------------------------------
// Plot data

inline const std::vector<std::string>& plot_metrics() {
    static const std::vector<std::string> m{"loss", "reg_loss"};
    return m;
}

struct PlotData {
    csv::Table curves;  // model_kind, seed, step, metric, value
    csv::Table sweep;   // model_kind, seed, num_skills, layer, metric, value
};

inline PlotData collect_plot_data(const std::vector<fs::path>& run_dirs) {
    if (run_dirs.empty()) throw ContractError("emit_plot_data: need at least one run directory");
    PlotData out;
    out.curves.header = {"model_kind", "seed", "step", "metric", "value"};
    out.sweep.header = {"model_kind", "seed", "num_skills", "layer", "metric", "value"};
    for (const auto& dir : run_dirs) {
        const ExperimentConfig c = parse_config((dir / "config.json").string());
        const std::string kind = to_string(c.model_kind);
        const std::string seed = std::to_string(c.seed);
        const csv::Table h = csv::read_table((dir / "history.csv").string());
        if (!h.header.empty()) {
            const std::size_t step = h.column("step");
            for (const auto& row : h.rows) {
                for (const auto& m : plot_metrics()) out.curves.rows.push_back({kind, seed, row[step], m, row[h.column(m)]});
            }
        }
        if (!fs::exists(dir / "summary.json")) continue;
        const Json s = detail::read_json(dir / "summary.json");
        if (s.value("status", "") != "ok") continue;
        const std::string skills = std::to_string(s["num_skills"].get<std::size_t>());
        for (const auto& a : s["allocation"]) {
            const std::string layer = std::to_string(a["layer"].get<std::size_t>());
            for (const char* m : {"discreteness", "sparsity", "usage"}) {
                out.sweep.rows.push_back({kind, seed, skills, layer, m, detail::number_or_empty(a[m])});
            }
            const Json acc = detail::at_path(a, {"recovery", "cell_accuracy"});
            if (!acc.is_null()) out.sweep.rows.push_back({kind, seed, skills, layer, "cell_accuracy", detail::number_or_empty(acc)});
        }
    }
    return out;
}

// Writes curves.csv and sweep_metrics.csv under out_dir.
inline PlotData emit_plot_data(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
    PlotData data = collect_plot_data(run_dirs);
    fs::create_directories(out_dir);
    csv::write_table((out_dir / "curves.csv").string(), data.curves);
    csv::write_table((out_dir / "sweep_metrics.csv").string(), data.sweep);
    return data;
}

}  // namespace skillnet
