#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "skillnet/allocation.hpp"
#include "skillnet/baselines.hpp"
#include "skillnet/errors.hpp"
#include "skillnet/ops.hpp"
#include "skillnet/optim.hpp"
#include "skillnet/rng.hpp"
#include "skillnet/skill_store.hpp"

namespace skillnet {

enum class ModelKind { skilled, private_, shared, expert, hypernet };
enum class Parameterisation { dense, sparse, lowrank };
enum class Activation { relu, tanh, identity };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::skilled: return "skilled";
        case ModelKind::private_: return "private";
        case ModelKind::shared: return "shared";
        case ModelKind::expert: return "expert";
        case ModelKind::hypernet: return "hypernet";
    }
    return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "skilled") return ModelKind::skilled;
    if (s == "private") return ModelKind::private_;
    if (s == "shared") return ModelKind::shared;
    if (s == "expert") return ModelKind::expert;
    if (s == "hypernet") return ModelKind::hypernet;
    throw LookupError("unknown model kind '" + s + "'");
}

inline std::string to_string(Parameterisation p) {
    switch (p) {
        case Parameterisation::dense: return "dense";
        case Parameterisation::sparse: return "sparse";
        case Parameterisation::lowrank: return "lowrank";
    }
    return "?";
}

inline Parameterisation parameterisation_from_string(const std::string& s) {
    if (s == "dense") return Parameterisation::dense;
    if (s == "sparse") return Parameterisation::sparse;
    if (s == "lowrank") return Parameterisation::lowrank;
    throw LookupError("unknown parameterisation '" + s + "'");
}

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::identity: return "identity";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity") return Activation::identity;
    throw LookupError("unknown activation '" + s + "'");
}

struct ModelSpec {
    ModelKind kind = ModelKind::skilled;
    Parameterisation parameterisation = Parameterisation::dense;
    std::size_t input_dim = 16;
    std::size_t hidden_dim = 32;  // 0: a single linear layer
    std::size_t output_dim = 1;
    Activation activation = Activation::relu;
    std::size_t num_skills = 4;  // skilled only; other kinds derive it
    double sparsity = 0.9;
    std::size_t rank = 4;
    bool per_layer = true;
    std::size_t embedding_dim = 8;
    double logit_init = 0.0;
    // Skilled with a frozen allocation instead of learned logits.
    std::optional<BinaryMatrix> frozen_allocation;
    // Required for kind == expert.
    std::optional<ExpertTable> expert_table;
};

struct LinearShape {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t dim() const { return out * in + out; }
};

// How the allocation row is produced for a forward pass.
struct AllocMode {
    enum class Kind { sample, expected } kind = Kind::expected;
    double tau = 1.0;

    static AllocMode sample(double tau) { return {Kind::sample, tau}; }
    static AllocMode expected(double tau) { return {Kind::expected, tau}; }
};

using SkillLayer = std::variant<DenseSkills, SparseSkills, LowRankSkills>;

// Source of task-skill weights for one layer (or for all, in global mode).
struct LayerAllocation {
    std::optional<AllocationLogits> logits;
    std::optional<BinaryMatrix> fixed;
};

// Per-task network whose linear layers are composed from a base
// parameterisation plus an allocation-weighted mix of skill parameters.
class MultitaskModel {
  public:
    MultitaskModel() = default;

    MultitaskModel(ModelSpec spec, std::vector<std::string> task_names, std::uint64_t seed)
        : spec_(std::move(spec)), tasks_(std::move(task_names)), seed_(seed) {
        if (tasks_.empty()) throw ContractError("model: need at least one task");
        if (spec_.input_dim == 0 || spec_.output_dim == 0) throw ShapeError("model: zero input/output width");
        if (spec_.hidden_dim == 0) {
            shapes_.push_back({spec_.input_dim, spec_.output_dim});
        } else {
            shapes_.push_back({spec_.input_dim, spec_.hidden_dim});
            shapes_.push_back({spec_.hidden_dim, spec_.output_dim});
        }
        if (spec_.kind == ModelKind::hypernet) {
            build_hypernet();
            return;
        }
        const std::size_t n_alloc = spec_.per_layer ? shapes_.size() : 1;
        for (std::size_t l = 0; l < n_alloc; ++l) allocations_.push_back(make_allocation(l));
        num_skills_ = allocations_.front().logits ? allocations_.front().logits->num_skills()
                                                   : allocations_.front().fixed->cols();
        for (std::size_t l = 0; l < shapes_.size(); ++l) skills_.push_back(make_skills(l));
    }

    const ModelSpec& spec() const { return spec_; }
    ModelKind kind() const { return spec_.kind; }
    const std::vector<std::string>& task_names() const { return tasks_; }
    std::size_t num_tasks() const { return tasks_.size(); }
    std::size_t num_skills() const { return num_skills_; }
    std::size_t num_layers() const { return shapes_.size(); }
    const std::vector<LinearShape>& layer_shapes() const { return shapes_; }
    std::size_t num_allocations() const { return allocations_.size(); }
    const LayerAllocation& allocation(std::size_t a) const { return allocations_.at(a); }
    const SkillLayer& skills(std::size_t layer) const { return skills_.at(layer); }
    SkillLayer& skills(std::size_t layer) { return skills_.at(layer); }
    const std::optional<HyperNet>& hypernet() const { return hyper_; }
    bool has_learned_allocation() const { return !allocations_.empty() && allocations_.front().logits.has_value(); }

    std::optional<std::size_t> task_index(const std::string& name) const {
        auto it = std::find(tasks_.begin(), tasks_.end(), name);
        if (it == tasks_.end()) return std::nullopt;
        return static_cast<std::size_t>(it - tasks_.begin());
    }

    std::size_t allocation_index(std::size_t layer) const { return spec_.per_layer ? layer : 0; }

    // Normalised weights [S] of `task` at `layer`.
    Tensor task_weights(std::size_t layer, std::size_t task, const AllocMode& mode, Rng* rng) const {
        const LayerAllocation& a = allocations_.at(allocation_index(layer));
        if (a.fixed) {
            std::vector<double> row(a.fixed->cols());
            for (std::size_t j = 0; j < row.size(); ++j) row[j] = a.fixed->at(task, j) ? 1.0 : 0.0;
            return normalize_row(Tensor::vector(std::move(row)));
        }
        if (mode.kind == AllocMode::Kind::sample) {
            if (rng == nullptr) throw ContractError("model: sampling an allocation needs an rng");
            return normalize_row(gumbel_sigmoid_row(*a.logits, task, mode.tau, *rng));
        }
        return normalize_row(expected_row(*a.logits, task, mode.tau));
    }

    // Composed flat parameters of a dense/sparse layer for given weights.
    Tensor compose(std::size_t layer, const Tensor& w) const {
        return std::visit(
            [&](const auto& s) -> Tensor {
                using S = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<S, DenseSkills>) {
                    return compose_dense(s, w);
                } else if constexpr (std::is_same_v<S, SparseSkills>) {
                    if (!s.frozen()) return compose_dense(DenseSkills{s.phi, s.base}, w);
                    return compose_sparse(s, w);
                } else {
                    throw StateError("compose: low-rank layers are applied through lora_forward");
                }
            },
            skills_.at(layer));
    }

    // x: [n, input_dim] -> [n] when output_dim == 1, else [n, output_dim].
    Tensor forward(std::size_t task, const Tensor& x, const AllocMode& mode, Rng* rng = nullptr) const {
        if (task >= tasks_.size()) throw LookupError("model: unknown task index " + std::to_string(task));
        if (x.rank() != 2 || x.dim(1) != spec_.input_dim) {
            throw ShapeError("model: input " + shape_str(x.shape()) + " does not match width " +
                             std::to_string(spec_.input_dim));
        }
        // Global mode draws one allocation row shared by all layers.
        std::optional<Tensor> shared_w;
        Tensor h = x;
        for (std::size_t l = 0; l < shapes_.size(); ++l) {
            h = layer_forward(l, task, h, mode, rng, shared_w);
            if (l + 1 < shapes_.size()) h = activate(h);
        }
        if (spec_.output_dim == 1) return reshape(h, {h.dim(0)});
        return h;
    }

    // Deterministic relaxed allocation matrix of an allocation slot.
    Tensor allocation_matrix(std::size_t slot, double tau) const {
        Tape::Pause pause;
        const LayerAllocation& a = allocations_.at(slot);
        if (a.fixed) return a.fixed->to_tensor();
        return expected_allocation(*a.logits, tau).z_hat;
    }

    std::vector<NamedParam> parameters() const {
        std::vector<NamedParam> out;
        for (std::size_t a = 0; a < allocations_.size(); ++a) {
            if (allocations_[a].logits) {
                out.push_back({"alloc" + std::to_string(a) + ".logits", allocations_[a].logits->z, ParamRole::allocation});
            }
        }
        for (std::size_t l = 0; l < skills_.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            std::visit(
                [&](const auto& s) {
                    using S = std::decay_t<decltype(s)>;
                    if constexpr (std::is_same_v<S, LowRankSkills>) {
                        out.push_back({p + "W0", s.W0, ParamRole::base});
                        out.push_back({p + "b0", s.b0, ParamRole::base});
                        out.push_back({p + "A", s.A, ParamRole::skill});
                        out.push_back({p + "B", s.B, ParamRole::skill});
                    } else {
                        out.push_back({p + "base", s.base, ParamRole::base});
                        out.push_back({p + "phi", s.phi, ParamRole::skill});
                    }
                },
                skills_[l]);
        }
        if (hyper_) {
            out.push_back({"embeddings", hyper_->embeddings, ParamRole::embedding});
            for (std::size_t l = 0; l < hyper_->layers.size(); ++l) {
                const auto& hl = hyper_->layers[l];
                const std::string p = "layer" + std::to_string(l) + ".";
                out.push_back({p + "W0", hl.W0, ParamRole::base});
                out.push_back({p + "b0", hl.b0, ParamRole::base});
                out.push_back({p + "fA.W1", hl.f_A.W1, ParamRole::generator});
                out.push_back({p + "fA.W2", hl.f_A.W2, ParamRole::generator});
                out.push_back({p + "fB.W1", hl.f_B.W1, ParamRole::generator});
                out.push_back({p + "fB.W2", hl.f_B.W2, ParamRole::generator});
            }
        }
        return out;
    }

    // Number of skill-specific parameters (Phi, or A and B).
    std::size_t skill_param_count() const {
        std::size_t n = 0;
        for (const auto& p : parameters()) {
            if (p.role == ParamRole::skill) n += p.tensor.numel();
        }
        return n;
    }

    std::size_t total_param_count() const {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.tensor.numel();
        return n;
    }

    // Deep copy: every parameter tensor is cloned.
    MultitaskModel clone() const {
        MultitaskModel m = *this;
        for (auto& a : m.allocations_) {
            if (a.logits) a.logits->z = a.logits->z.clone();
        }
        for (auto& s : m.skills_) {
            std::visit(
                [](auto& v) {
                    using S = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<S, LowRankSkills>) {
                        v.A = v.A.clone();
                        v.B = v.B.clone();
                        v.W0 = v.W0.clone();
                        v.b0 = v.b0.clone();
                    } else {
                        v.phi = v.phi.clone();
                        v.base = v.base.clone();
                        if constexpr (std::is_same_v<S, SparseSkills>) {
                            if (v.mask) v.mask = v.mask->clone();
                        }
                    }
                },
                s);
        }
        if (m.hyper_) {
            m.hyper_->embeddings = m.hyper_->embeddings.clone();
            for (auto& l : m.hyper_->layers) {
                for (Tensor* t : {&l.W0, &l.b0, &l.f_A.W1, &l.f_A.W2, &l.f_B.W1, &l.f_B.W2}) *t = t->clone();
            }
        }
        return m;
    }

    // Copies parameter values from a structurally identical model.
    void load_values_from(const MultitaskModel& other) {
        auto mine = parameters();
        auto theirs = other.parameters();
        if (mine.size() != theirs.size()) throw ShapeError("model: parameter layout differs");
        for (std::size_t i = 0; i < mine.size(); ++i) {
            if (mine[i].tensor.shape() != theirs[i].tensor.shape()) throw ShapeError("model: parameter shape differs");
            std::copy(theirs[i].tensor.data().begin(), theirs[i].tensor.data().end(),
                      mine[i].tensor.mutable_data().begin());
        }
        for (std::size_t l = 0; l < skills_.size(); ++l) {
            if (auto* s = std::get_if<SparseSkills>(&skills_[l])) {
                const auto& o = std::get<SparseSkills>(other.skills_[l]);
                s->mask = o.mask ? std::optional<Tensor>(o.mask->clone()) : std::nullopt;
                s->pending_rows = o.pending_rows;
            }
        }
    }

    // Appends a task for few-shot adaptation; returns its index.
    //  skilled  -> fresh logits row at logit_init
    //  private  -> fresh skill (zero delta from the base) with a one-hot row
    //  shared   -> row [1]
    //  expert   -> row from `expert_skills`
    //  hypernet -> fresh embedding
    std::size_t add_task(const std::string& name, std::uint64_t seed,
                         const std::optional<std::vector<std::size_t>>& expert_skills = std::nullopt) {
        if (task_index(name)) throw ContractError("add_task: task '" + name + "' already exists");
        if (hyper_) {
            Tensor e = fresh_embedding(hyper_->embedding_dim(), seed);
            hyper_->embeddings = append_row(hyper_->embeddings, e.data(), true);
        } else if (spec_.kind == ModelKind::private_) {
            for (std::size_t l = 0; l < skills_.size(); ++l) append_skill(l, derive_seed(seed, l));
            ++num_skills_;
            for (auto& a : allocations_) {
                BinaryMatrix grown(a.fixed->rows() + 1, a.fixed->cols() + 1);
                for (std::size_t i = 0; i < a.fixed->rows(); ++i) {
                    for (std::size_t j = 0; j < a.fixed->cols(); ++j) grown.set(i, j, a.fixed->at(i, j));
                }
                grown.set(a.fixed->rows(), a.fixed->cols(), true);
                a.fixed = std::move(grown);
            }
        } else {
            for (auto& a : allocations_) {
                if (a.logits) {
                    std::vector<double> row(a.logits->num_skills(), spec_.logit_init);
                    a.logits->z = append_row(a.logits->z, row, true);
                } else if (spec_.kind == ModelKind::shared) {
                    a.fixed = a.fixed->with_row({1});
                } else {
                    if (!expert_skills) {
                        throw ContractError("add_task: task '" + name + "' needs an explicit skill set");
                    }
                    a.fixed = a.fixed->with_row(expert_row(*expert_skills, a.fixed->cols(), name));
                }
            }
        }
        tasks_.push_back(name);
        return tasks_.size() - 1;
    }

    // Selects LT-SFT masks from the change since `before` (a clone taken at
    // the start of warm-up). Rows already frozen keep their masks.
    void freeze_masks(const MultitaskModel& before) {
        for (std::size_t l = 0; l < skills_.size(); ++l) {
            auto* s = std::get_if<SparseSkills>(&skills_[l]);
            if (s == nullptr) continue;
            const auto& prev = std::get<SparseSkills>(before.skills_.at(l));
            if (!s->mask) {
                freeze_sparse_mask(*s, prev.phi);
            } else if (!s->pending_rows.empty()) {
                const std::size_t d = s->dim();
                const std::size_t k = sparse_keep_count(d, s->sparsity);
                for (std::size_t r : s->pending_rows) {
                    Tensor row_before = reshape(select(prev.phi, r), {1, d});
                    Tensor row_after = reshape(select(s->phi, r), {1, d});
                    Tensor m = select_sparse_mask(row_before, row_after, k);
                    auto mask = s->mask->mutable_data();
                    std::copy(m.data().begin(), m.data().end(), mask.begin() + static_cast<std::ptrdiff_t>(r * d));
                }
                s->pending_rows.clear();
            }
        }
        apply_masks();
    }

    bool has_unfrozen_sparse() const {
        for (const auto& s : skills_) {
            if (const auto* sp = std::get_if<SparseSkills>(&s)) {
                if (!sp->mask || !sp->pending_rows.empty()) return true;
            }
        }
        return false;
    }

    // Zeroes masked entries of frozen sparse inventories.
    void apply_masks() {
        for (auto& s : skills_) {
            auto* sp = std::get_if<SparseSkills>(&s);
            if (sp == nullptr || !sp->mask) continue;
            auto values = sp->phi.mutable_data();
            for (std::size_t i = 0; i < values.size(); ++i) {
                if ((*sp->mask)[i] == 0.0) values[i] = 0.0;
            }
        }
    }

  private:
    Tensor activate(const Tensor& h) const {
        switch (spec_.activation) {
            case Activation::relu: return relu(h);
            case Activation::tanh: return tanh(h);
            case Activation::identity: return h;
        }
        return h;
    }

    Tensor layer_forward(std::size_t l, std::size_t task, const Tensor& x, const AllocMode& mode, Rng* rng,
                         std::optional<Tensor>& shared_w) const {
        if (hyper_) return hypernet_forward(task, *hyper_, l, x);
        Tensor w;
        if (spec_.per_layer) {
            w = task_weights(l, task, mode, rng);
        } else {
            if (!shared_w) shared_w = task_weights(0, task, mode, rng);
            w = *shared_w;
        }
        if (const auto* lr = std::get_if<LowRankSkills>(&skills_[l])) return lora_forward(x, *lr, w);
        const LinearShape& shape = shapes_[l];
        Tensor theta = compose(l, w);
        Tensor weight = reshape(slice(theta, 0, shape.out * shape.in), {shape.out, shape.in});
        Tensor bias = slice(theta, shape.out * shape.in, shape.dim());
        return matmul(x, transpose(weight)) + bias;
    }

    LayerAllocation make_allocation(std::size_t slot) const {
        LayerAllocation a;
        switch (spec_.kind) {
            case ModelKind::skilled:
                if (spec_.frozen_allocation) {
                    if (spec_.frozen_allocation->rows() != tasks_.size()) {
                        throw ShapeError("model: frozen allocation rows do not match task count");
                    }
                    a.fixed = *spec_.frozen_allocation;
                } else {
                    a.logits = init_logits(tasks_.size(), spec_.num_skills, spec_.logit_init, slot);
                }
                break;
            case ModelKind::private_: a.fixed = allocation_private(tasks_.size()).matrix; break;
            case ModelKind::shared: a.fixed = allocation_shared(tasks_.size()).matrix; break;
            case ModelKind::expert: {
                if (!spec_.expert_table) throw ContractError("model: expert kind requires an expert table");
                ExpertTable ordered;
                ordered.num_skills = spec_.expert_table->num_skills;
                for (const auto& name : tasks_) {
                    const auto* skills = spec_.expert_table->find(name);
                    if (skills == nullptr) throw LookupError("model: expert table has no entry for '" + name + "'");
                    ordered.tasks.emplace_back(name, *skills);
                }
                a.fixed = allocation_expert(ordered).matrix;
                break;
            }
            case ModelKind::hypernet: break;
        }
        return a;
    }

    // Kaiming-uniform with fan_in = layer input width for every flat parameter.
    Tensor kaiming_flat(std::size_t rows, const LinearShape& shape, std::uint64_t seed) const {
        const double bound = std::sqrt(6.0 / static_cast<double>(shape.in));
        Shape s = rows == 0 ? Shape{shape.dim()} : Shape{rows, shape.dim()};
        return Tensor::make(s, fill::Uniform{-bound, bound, seed});
    }

    SkillLayer make_skills(std::size_t l) const {
        const LinearShape& shape = shapes_[l];
        const std::uint64_t layer_seed = derive_seed(seed_, 100 + l);
        const std::size_t S = num_skills_;
        switch (spec_.parameterisation) {
            case Parameterisation::dense:
            case Parameterisation::sparse: {
                Tensor base = kaiming_flat(0, shape, derive_seed(layer_seed, 1));
                Tensor phi = kaiming_flat(S, shape, derive_seed(layer_seed, 2));
                base.set_requires_grad(true);
                phi.set_requires_grad(true);
                if (spec_.parameterisation == Parameterisation::dense) return DenseSkills{phi, base};
                SparseSkills sp;
                sp.phi = phi;
                sp.base = base;
                sp.sparsity = spec_.sparsity;
                sparse_keep_count(shape.dim(), spec_.sparsity);
                return sp;
            }
            case Parameterisation::lowrank: {
                const std::size_t r = std::min({spec_.rank, shape.in, shape.out});
                if (r == 0) throw ShapeError("model: rank must be >= 1");
                LowRankSkills lr;
                lr.W0 = Tensor::make({shape.out, shape.in}, fill::KaimingUniform{derive_seed(layer_seed, 1)});
                lr.b0 = Tensor::zeros({shape.out});
                lr.A = Tensor::zeros({S, shape.out, r});
                lr.B = Tensor::make({S, r, shape.in}, fill::KaimingUniform{derive_seed(layer_seed, 2)});
                for (Tensor* t : {&lr.W0, &lr.b0, &lr.A, &lr.B}) t->set_requires_grad(true);
                return lr;
            }
        }
        throw StateError("model: unknown parameterisation");
    }

    void build_hypernet() {
        HyperNet net;
        net.embeddings = Tensor::make({tasks_.size(), spec_.embedding_dim}, fill::KaimingUniform{derive_seed(seed_, 7)});
        net.embeddings.set_requires_grad(true);
        for (std::size_t l = 0; l < shapes_.size(); ++l) {
            net.layers.push_back(
                make_hyper_layer(shapes_[l].in, shapes_[l].out, spec_.rank, spec_.embedding_dim, derive_seed(seed_, 200 + l)));
        }
        hyper_ = std::move(net);
        num_skills_ = 0;
    }

    static Tensor append_row(const Tensor& t, std::span<const double> row, bool requires_grad) {
        std::vector<double> values(t.data().begin(), t.data().end());
        values.insert(values.end(), row.begin(), row.end());
        Shape s = t.shape();
        s[0] += 1;
        Tensor out(s, std::move(values));
        out.set_requires_grad(requires_grad);
        return out;
    }

    void append_skill(std::size_t l, std::uint64_t seed) {
        const LinearShape& shape = shapes_[l];
        std::visit(
            [&](auto& s) {
                using S = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<S, LowRankSkills>) {
                    std::vector<double> a(s.out_dim() * s.rank(), 0.0);
                    s.A = append_row(s.A, a, true);
                    Tensor b = Tensor::make({s.rank(), s.in_dim()}, fill::KaimingUniform{seed});
                    s.B = append_row(s.B, b.data(), true);
                } else {
                    std::vector<double> zero(shape.dim(), 0.0);
                    s.phi = append_row(s.phi, zero, true);
                    if constexpr (std::is_same_v<S, SparseSkills>) {
                        if (s.mask) {
                            std::vector<double> ones(shape.dim(), 1.0);
                            s.mask = append_row(*s.mask, ones, false);
                            s.pending_rows.push_back(s.phi.dim(0) - 1);
                        }
                    }
                }
            },
            skills_[l]);
    }

    ModelSpec spec_;
    std::vector<std::string> tasks_;
    std::uint64_t seed_ = 0;
    std::vector<LinearShape> shapes_;
    std::vector<LayerAllocation> allocations_;
    std::vector<SkillLayer> skills_;
    std::optional<HyperNet> hyper_;
    std::size_t num_skills_ = 0;
};

}  // namespace skillnet
