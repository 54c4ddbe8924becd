#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillnet/baselines.hpp"
#include "skillnet/benchmark.hpp"
#include "skillnet/errors.hpp"
#include "skillnet/model.hpp"
#include "skillnet/trainer.hpp"

namespace skillnet {

struct ExperimentConfig {
    // world
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
    TaskKind task_type = TaskKind::regression;
    std::size_t num_heldout_tasks = 4;
    double base_scale = 1.0;
    // model
    ModelKind model_kind = ModelKind::skilled;
    std::size_t num_skills = 4;
    Parameterisation parameterisation = Parameterisation::dense;
    double sparsity = 0.9;
    std::size_t rank = 4;
    std::size_t hidden_dim = 32;
    Activation activation = Activation::relu;
    bool per_layer_allocation = true;
    std::size_t embedding_dim = 8;
    double logit_init = 0.0;
    std::optional<ExpertTable> expert_table;
    // optimisation
    double lr_z = 0.1;
    double lr_phi = 1e-3;
    double tau = 1.0;
    std::optional<double> tau_final;
    double alpha = 5.0;
    double ibp_strength = 0.0;
    std::size_t epochs = 30;
    std::optional<std::size_t> train_steps;
    std::size_t batch_size = 32;
    std::size_t restarts = 1;
    std::size_t mask_warmup_steps = 100;
    std::size_t eval_interval = 50;
    bool select_best_dev = false;
    // few-shot
    std::size_t k_shot = 16;
    std::size_t adaptation_steps = 1000;
    std::size_t adaptation_batch_size = 8;
    std::size_t adaptation_z_only_steps = 100;
    bool adaptation_train_phi = true;
    std::size_t few_shot_resamples = 5;
    // reporting
    std::optional<double> threshold_loss;
    double threshold_factor = 1.25;
    std::optional<std::string> output_dir;
    std::vector<std::size_t> sweep_grid{2, 4, 8, 16, 32};
    std::size_t parallelism = 1;
};

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Expert tables: {"tasks": {"name": [skill indices]}, "num_skills": k}

inline ExpertTable expert_table_from_json(const Json& j) {
    if (!j.is_object()) throw ContractError("expert table must be an object");
    for (const auto& [k, _] : j.items()) {
        if (k != "tasks" && k != "num_skills") throw ContractError("expert table: unknown key '" + k + "'");
    }
    if (!j.contains("tasks") || !j["tasks"].is_object()) throw ContractError("expert table: 'tasks' must be an object");
    if (!j.contains("num_skills") || !j["num_skills"].is_number_unsigned()) {
        throw ContractError("expert table: 'num_skills' must be a non-negative integer");
    }
    ExpertTable t;
    t.num_skills = j["num_skills"].get<std::size_t>();
    for (const auto& [name, skills] : j["tasks"].items()) {
        if (!skills.is_array()) throw ContractError("expert table: skills of '" + name + "' must be an array");
        std::vector<std::size_t> s;
        for (const auto& v : skills) {
            if (!v.is_number_unsigned()) throw ContractError("expert table: skill indices must be non-negative integers");
            s.push_back(v.get<std::size_t>());
        }
        expert_row(s, t.num_skills, name);
        t.tasks.emplace_back(name, std::move(s));
    }
    return t;
}

inline Json expert_table_to_json(const ExpertTable& t) {
    Json tasks = Json::object();
    for (const auto& [name, skills] : t.tasks) tasks[name] = skills;
    return Json{{"tasks", tasks}, {"num_skills", t.num_skills}};
}

namespace detail {

// One field: how to read it from JSON (with type checks) and write it back.
struct ConfigField {
    std::string key;
    std::function<void(ExperimentConfig&, const Json&)> read;
    std::function<Json(const ExperimentConfig&)> write;
};

inline std::size_t read_size(const std::string& key, const Json& v) {
    if (!v.is_number_integer()) throw ConfigError(key, "expected a non-negative integer, got " + std::string(v.type_name()));
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.get<std::int64_t>() < 0) throw ConfigError(key, "must be non-negative");
    return static_cast<std::size_t>(v.get<std::int64_t>());
}

inline double read_double(const std::string& key, const Json& v) {
    if (!v.is_number()) throw ConfigError(key, "expected a number, got " + std::string(v.type_name()));
    return v.get<double>();
}

inline bool read_bool(const std::string& key, const Json& v) {
    if (!v.is_boolean()) throw ConfigError(key, "expected a boolean, got " + std::string(v.type_name()));
    return v.get<bool>();
}

inline std::string read_string(const std::string& key, const Json& v) {
    if (!v.is_string()) throw ConfigError(key, "expected a string, got " + std::string(v.type_name()));
    return v.get<std::string>();
}

template <class T, class F>
T read_enum(const std::string& key, const Json& v, F parse) {
    const std::string s = read_string(key, v);
    try {
        return parse(s);
    } catch (const LookupError& e) {
        throw ConfigError(key, e.what());
    }
}

#define SKILLNET_FIELD(name, reader)                                                            \
    ConfigField {                                                                               \
        #name, [](ExperimentConfig& c, const Json& v) { c.name = reader(#name, v); },            \
            [](const ExperimentConfig& c) { return Json(c.name); }                              \
    }
#define SKILLNET_OPTIONAL_FIELD(name, reader)                                                   \
    ConfigField {                                                                               \
        #name,                                                                                  \
            [](ExperimentConfig& c, const Json& v) {                                            \
                if (v.is_null()) c.name.reset();                                                \
                else c.name = reader(#name, v);                                                 \
            },                                                                                  \
            [](const ExperimentConfig& c) { return c.name ? Json(*c.name) : Json(nullptr); }    \
    }

inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = {
        ConfigField{"seed",
                    [](ExperimentConfig& c, const Json& v) {
                        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
                            throw ConfigError("seed", "expected a non-negative integer");
                        }
                        c.seed = v.is_number_unsigned() ? v.get<std::uint64_t>()
                                                        : static_cast<std::uint64_t>(v.get<std::int64_t>());
                    },
                    [](const ExperimentConfig& c) { return Json(c.seed); }},
        SKILLNET_FIELD(num_tasks, read_size),
        SKILLNET_FIELD(num_true_skills, read_size),
        SKILLNET_FIELD(input_dim, read_size),
        SKILLNET_FIELD(examples_per_task, read_size),
        SKILLNET_FIELD(dev_examples, read_size),
        SKILLNET_FIELD(eval_examples, read_size),
        SKILLNET_FIELD(noise_sigma, read_double),
        SKILLNET_FIELD(min_skills_per_task, read_size),
        SKILLNET_FIELD(max_skills_per_task, read_size),
        ConfigField{"task_type",
                    [](ExperimentConfig& c, const Json& v) {
                        c.task_type = read_enum<TaskKind>("task_type", v, task_kind_from_string);
                    },
                    [](const ExperimentConfig& c) { return Json(to_string(c.task_type)); }},
        SKILLNET_FIELD(num_heldout_tasks, read_size),
        SKILLNET_FIELD(base_scale, read_double),
        ConfigField{"model_kind",
                    [](ExperimentConfig& c, const Json& v) {
                        c.model_kind = read_enum<ModelKind>("model_kind", v, model_kind_from_string);
                    },
                    [](const ExperimentConfig& c) { return Json(to_string(c.model_kind)); }},
        SKILLNET_FIELD(num_skills, read_size),
        ConfigField{"parameterisation",
                    [](ExperimentConfig& c, const Json& v) {
                        c.parameterisation =
                            read_enum<Parameterisation>("parameterisation", v, parameterisation_from_string);
                    },
                    [](const ExperimentConfig& c) { return Json(to_string(c.parameterisation)); }},
        SKILLNET_FIELD(sparsity, read_double),
        SKILLNET_FIELD(rank, read_size),
        SKILLNET_FIELD(hidden_dim, read_size),
        ConfigField{"activation",
                    [](ExperimentConfig& c, const Json& v) {
                        c.activation = read_enum<Activation>("activation", v, activation_from_string);
                    },
                    [](const ExperimentConfig& c) { return Json(to_string(c.activation)); }},
        SKILLNET_FIELD(per_layer_allocation, read_bool),
        SKILLNET_FIELD(embedding_dim, read_size),
        SKILLNET_FIELD(logit_init, read_double),
        ConfigField{"expert_table",
                    [](ExperimentConfig& c, const Json& v) {
                        if (v.is_null()) {
                            c.expert_table.reset();
                            return;
                        }
                        try {
                            c.expert_table = expert_table_from_json(v);
                        } catch (const Error& e) {
                            throw ConfigError("expert_table", e.what());
                        }
                    },
                    [](const ExperimentConfig& c) {
                        return c.expert_table ? expert_table_to_json(*c.expert_table) : Json(nullptr);
                    }},
        SKILLNET_FIELD(lr_z, read_double),
        SKILLNET_FIELD(lr_phi, read_double),
        SKILLNET_FIELD(tau, read_double),
        SKILLNET_OPTIONAL_FIELD(tau_final, read_double),
        SKILLNET_FIELD(alpha, read_double),
        SKILLNET_FIELD(ibp_strength, read_double),
        SKILLNET_FIELD(epochs, read_size),
        SKILLNET_OPTIONAL_FIELD(train_steps, read_size),
        SKILLNET_FIELD(batch_size, read_size),
        SKILLNET_FIELD(restarts, read_size),
        SKILLNET_FIELD(mask_warmup_steps, read_size),
        SKILLNET_FIELD(eval_interval, read_size),
        SKILLNET_FIELD(select_best_dev, read_bool),
        SKILLNET_FIELD(k_shot, read_size),
        SKILLNET_FIELD(adaptation_steps, read_size),
        SKILLNET_FIELD(adaptation_batch_size, read_size),
        SKILLNET_FIELD(adaptation_z_only_steps, read_size),
        SKILLNET_FIELD(adaptation_train_phi, read_bool),
        SKILLNET_FIELD(few_shot_resamples, read_size),
        SKILLNET_OPTIONAL_FIELD(threshold_loss, read_double),
        SKILLNET_FIELD(threshold_factor, read_double),
        SKILLNET_OPTIONAL_FIELD(output_dir, read_string),
        ConfigField{"sweep_grid",
                    [](ExperimentConfig& c, const Json& v) {
                        if (!v.is_array() || v.empty()) throw ConfigError("sweep_grid", "expected a non-empty array");
                        c.sweep_grid.clear();
                        for (const auto& x : v) c.sweep_grid.push_back(read_size("sweep_grid", x));
                    },
                    [](const ExperimentConfig& c) { return Json(c.sweep_grid); }},
        SKILLNET_FIELD(parallelism, read_size),
    };
    return fields;
}

#undef SKILLNET_FIELD
#undef SKILLNET_OPTIONAL_FIELD

}  // namespace detail

// Constraint checks; throws ConfigError naming the offending key.
inline void validate_config(const ExperimentConfig& c) {
    auto require = [](bool ok, const char* key, const std::string& what) {
        if (!ok) throw ConfigError(key, what);
    };
    require(c.num_tasks >= 1, "num_tasks", "must be at least 1");
    require(c.num_true_skills >= 1, "num_true_skills", "must be at least 1");
    require(c.num_true_skills <= c.num_tasks, "num_true_skills", "must not exceed num_tasks");
    require(c.input_dim >= 1, "input_dim", "must be at least 1");
    require(c.examples_per_task >= 1, "examples_per_task", "must be at least 1");
    require(c.eval_examples >= 1, "eval_examples", "must be at least 1");
    require(c.noise_sigma >= 0, "noise_sigma", "must be non-negative");
    require(c.min_skills_per_task >= 1, "min_skills_per_task", "must be at least 1");
    require(c.max_skills_per_task >= c.min_skills_per_task, "max_skills_per_task",
            "must be at least min_skills_per_task");
    require(c.max_skills_per_task <= c.num_true_skills, "max_skills_per_task", "must not exceed num_true_skills");
    require(c.base_scale >= 0, "base_scale", "must be non-negative");
    require(c.num_skills >= 1, "num_skills", "must be at least 1");
    require(c.sparsity >= 0 && c.sparsity < 1, "sparsity", "must lie in [0, 1)");
    require(c.rank >= 1, "rank", "must be at least 1");
    require(c.embedding_dim >= 1, "embedding_dim", "must be at least 1");
    require(c.lr_z > 0, "lr_z", "must be positive");
    require(c.lr_phi > 0, "lr_phi", "must be positive");
    require(c.tau > 0, "tau", "must be positive");
    require(!c.tau_final || *c.tau_final > 0, "tau_final", "must be positive");
    require(c.alpha > 0, "alpha", "must be positive");
    require(c.ibp_strength >= 0, "ibp_strength", "must be non-negative");
    require(c.batch_size >= 1, "batch_size", "must be at least 1");
    require(c.restarts >= 1, "restarts", "must be at least 1");
    require(c.k_shot <= 32, "k_shot", "must not exceed 32");
    require(c.k_shot <= c.examples_per_task, "k_shot", "must not exceed examples_per_task");
    require(c.adaptation_batch_size >= 1, "adaptation_batch_size", "must be at least 1");
    require(c.few_shot_resamples >= 1, "few_shot_resamples", "must be at least 1");
    require(c.threshold_factor > 0, "threshold_factor", "must be positive");
    require(c.parallelism >= 1, "parallelism", "must be at least 1");
    for (auto s : c.sweep_grid) require(s >= 1, "sweep_grid", "grid values must be at least 1");
    if (c.expert_table) {
        require(c.expert_table->num_skills == c.num_skills, "expert_table",
                "num_skills of the table (" + std::to_string(c.expert_table->num_skills) +
                    ") differs from num_skills (" + std::to_string(c.num_skills) + ")");
    }
}

// Strict parse: unknown keys and mistyped values are rejected.
inline ExperimentConfig config_from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("<root>", "configuration must be a JSON object");
    ExperimentConfig c;
    const auto& fields = detail::config_fields();
    for (const auto& [key, value] : j.items()) {
        auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.key == key; });
        if (it == fields.end()) throw ConfigError(key, "unknown key");
        it->read(c, value);
    }
    validate_config(c);
    return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// Every key, in declaration order.
inline Json config_to_json(const ExperimentConfig& c) {
    Json j = Json::object();
    for (const auto& f : detail::config_fields()) j[f.key] = f.write(c);
    return j;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Content address of a configuration; placement keys are excluded.
inline std::string config_hash(const ExperimentConfig& c) {
    Json j = config_to_json(c);
    j.erase("output_dir");
    j.erase("parallelism");
    return hex64(fnv1a64(j.dump()));
}

// ---------------------------------------------------------------------------
// Derived settings

inline BenchmarkConfig benchmark_config(const ExperimentConfig& c) {
    BenchmarkConfig b;
    b.seed = derive_seed(c.seed, 1);
    b.num_tasks = c.num_tasks;
    b.num_true_skills = c.num_true_skills;
    b.input_dim = c.input_dim;
    b.examples_per_task = c.examples_per_task;
    b.dev_examples = c.dev_examples;
    b.eval_examples = c.eval_examples;
    b.noise_sigma = c.noise_sigma;
    b.min_skills_per_task = c.min_skills_per_task;
    b.max_skills_per_task = c.max_skills_per_task;
    b.kind = c.task_type;
    b.num_heldout_tasks = c.num_heldout_tasks;
    b.base_scale = c.base_scale;
    return b;
}

inline ModelSpec model_spec(const ExperimentConfig& c) {
    ModelSpec s;
    s.kind = c.model_kind;
    s.parameterisation = c.parameterisation;
    s.input_dim = c.input_dim;
    s.hidden_dim = c.hidden_dim;
    s.output_dim = 1;
    s.activation = c.activation;
    s.num_skills = c.num_skills;
    s.sparsity = c.sparsity;
    s.rank = c.rank;
    s.per_layer = c.per_layer_allocation;
    s.embedding_dim = c.embedding_dim;
    s.logit_init = c.logit_init;
    s.expert_table = c.expert_table;
    return s;
}

inline TrainConfig train_config(const ExperimentConfig& c, const std::vector<TaskSpec>& tasks) {
    TrainConfig t;
    t.steps = c.train_steps ? *c.train_steps : steps_for_epochs(c.epochs, tasks, c.batch_size);
    t.batch_size = c.batch_size;
    t.lr_z = c.lr_z;
    t.lr_phi = c.lr_phi;
    t.tau = TauSchedule{c.tau, c.tau_final, t.steps};
    t.alpha = c.alpha;
    t.ibp_strength = c.ibp_strength;
    t.mask_warmup_steps = c.mask_warmup_steps;
    t.eval_interval = c.eval_interval;
    t.select_best_dev = c.select_best_dev;
    t.restarts = c.restarts;
    t.seed = derive_seed(c.seed, 2);
    return t;
}

inline AdaptConfig adapt_config(const ExperimentConfig& c, double tau, std::uint64_t seed) {
    AdaptConfig a;
    a.steps = c.adaptation_steps;
    a.k_shot = c.k_shot;
    a.batch_size = c.adaptation_batch_size;
    a.z_only_steps = c.adaptation_z_only_steps;
    a.train_phi = c.adaptation_train_phi;
    a.lr_z = c.lr_z;
    a.lr_phi = c.lr_phi;
    a.tau = tau;
    a.mask_warmup_steps = c.mask_warmup_steps;
    a.seed = seed;
    return a;
}

}  // namespace skillnet
