#pragma once

#include <string>
#include <utility>
#include <vector>

#include "skillnet/allocation.hpp"
#include "skillnet/errors.hpp"
#include "skillnet/ops.hpp"

namespace skillnet {

enum class FixedKind { private_, shared, expert };

// Non-learnable task-skill allocation.
struct FixedAllocation {
    FixedKind kind;
    BinaryMatrix matrix;
};

inline FixedAllocation allocation_private(std::size_t num_tasks) {
    if (num_tasks == 0) throw ContractError("allocation_private: need at least one task");
    return {FixedKind::private_, BinaryMatrix::identity(num_tasks)};
}

inline FixedAllocation allocation_shared(std::size_t num_tasks) {
    if (num_tasks == 0) throw ContractError("allocation_shared: need at least one task");
    return {FixedKind::shared, BinaryMatrix(num_tasks, 1, 1)};
}

// Expert knowledge: task name -> active skill indices, in a fixed task order.
struct ExpertTable {
    std::vector<std::pair<std::string, std::vector<std::size_t>>> tasks;
    std::size_t num_skills = 0;

    const std::vector<std::size_t>* find(const std::string& name) const {
        for (const auto& [task, skills] : tasks) {
            if (task == name) return &skills;
        }
        return nullptr;
    }
};

inline std::vector<std::uint8_t> expert_row(const std::vector<std::size_t>& skills, std::size_t num_skills,
                                            const std::string& task) {
    if (skills.empty()) throw ContractError("allocation_expert: task '" + task + "' has an empty skill set");
    std::vector<std::uint8_t> row(num_skills, 0);
    for (auto s : skills) {
        if (s >= num_skills) {
            throw ContractError("allocation_expert: skill " + std::to_string(s) + " of task '" + task +
                                "' is outside [0, " + std::to_string(num_skills) + ")");
        }
        row[s] = 1;
    }
    return row;
}

inline FixedAllocation allocation_expert(const ExpertTable& table) {
    if (table.num_skills == 0) throw ContractError("allocation_expert: num_skills must be positive");
    BinaryMatrix m;
    for (const auto& [task, skills] : table.tasks) m = m.with_row(expert_row(skills, table.num_skills, task));
    if (m.rows() == 0) throw ContractError("allocation_expert: empty table");
    return {FixedKind::expert, std::move(m)};
}

// Table whose rows are the given binary matrix, named in order.
inline ExpertTable expert_table_from_matrix(const BinaryMatrix& z, const std::vector<std::string>& names) {
    ExpertTable table;
    table.num_skills = z.cols();
    for (std::size_t i = 0; i < z.rows(); ++i) {
        std::vector<std::size_t> skills;
        for (std::size_t j = 0; j < z.cols(); ++j) {
            if (z.at(i, j)) skills.push_back(j);
        }
        table.tasks.emplace_back(names.at(i), std::move(skills));
    }
    return table;
}

// ---------------------------------------------------------------------------
// Hypernetwork baseline: task embedding -> low-rank delta per layer.

// f(e) = W2 relu(W1 e)
struct Generator {
    Tensor W1;  // [hidden, e]
    Tensor W2;  // [out, hidden]

    Tensor operator()(const Tensor& embedding) const {
        const std::size_t e = W1.dim(1);
        Tensor h = relu(matmul(W1, reshape(embedding, {e, 1})));
        return reshape(matmul(W2, h), {W2.dim(0)});
    }
};

struct HyperLayer {
    Tensor W0;  // [o, i]
    Tensor b0;  // [o]
    Generator f_A;  // -> o * r, W2 zero-initialised
    Generator f_B;  // -> r * i
    std::size_t rank = 1;

    std::size_t out_dim() const { return W0.dim(0); }
    std::size_t in_dim() const { return W0.dim(1); }
};

struct HyperNet {
    Tensor embeddings;  // [T, e]
    std::vector<HyperLayer> layers;

    std::size_t num_tasks() const { return embeddings.dim(0); }
    std::size_t embedding_dim() const { return embeddings.dim(1); }

    // Parameters of the generators only (embeddings and base weights excluded).
    std::size_t generator_param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.f_A.W1.numel() + l.f_A.W2.numel() + l.f_B.W1.numel() + l.f_B.W2.numel();
        return n;
    }
};

// Hidden size of the generators equals the embedding size.
inline HyperLayer make_hyper_layer(std::size_t in, std::size_t out, std::size_t rank, std::size_t embedding_dim,
                                   std::uint64_t seed) {
    const std::size_t r = std::min({rank, in, out});
    HyperLayer layer;
    layer.rank = r;
    layer.W0 = Tensor::make({out, in}, fill::KaimingUniform{derive_seed(seed, 1)});
    layer.b0 = Tensor::zeros({out});
    layer.f_A = {Tensor::make({embedding_dim, embedding_dim}, fill::KaimingUniform{derive_seed(seed, 2)}),
                 Tensor::zeros({out * r, embedding_dim})};
    layer.f_B = {Tensor::make({embedding_dim, embedding_dim}, fill::KaimingUniform{derive_seed(seed, 3)}),
                 Tensor::make({r * in, embedding_dim}, fill::KaimingUniform{derive_seed(seed, 4)})};
    for (Tensor* t : {&layer.W0, &layer.b0, &layer.f_A.W1, &layer.f_A.W2, &layer.f_B.W1, &layer.f_B.W2}) {
        t->set_requires_grad(true);
    }
    return layer;
}

inline Tensor fresh_embedding(std::size_t embedding_dim, std::uint64_t seed) {
    return Tensor::make({embedding_dim}, fill::KaimingUniform{seed});
}

// (A_i [o, r], B_i [r, i]) for one layer; generator outputs are reshaped row-major.
inline std::pair<Tensor, Tensor> hypernet_generate(std::size_t task_id, const HyperNet& net, std::size_t layer = 0) {
    if (task_id >= net.num_tasks()) {
        throw LookupError("hypernet_generate: no embedding for task " + std::to_string(task_id));
    }
    const HyperLayer& l = net.layers.at(layer);
    Tensor e = select(net.embeddings, task_id);
    Tensor a = reshape(l.f_A(e), {l.out_dim(), l.rank});
    Tensor b = reshape(l.f_B(e), {l.rank, l.in_dim()});
    return {a, b};
}

// x' = (W0 + A_i B_i) x + b0 in factored form, x given as [n, i].
inline Tensor hypernet_forward(std::size_t task_id, const HyperNet& net, std::size_t layer, const Tensor& x) {
    const HyperLayer& l = net.layers.at(layer);
    auto [a, b] = hypernet_generate(task_id, net, layer);
    Tensor y = matmul(x, transpose(l.W0));
    y = y + matmul(matmul(x, transpose(b)), transpose(a));
    return y + l.b0;
}

// Parameters HyperFormer adds with l layers, hidden size h and embedding size
// e (generator hidden size = e, generated rank = e).
inline std::uint64_t param_count_hyperformer(std::uint64_t layers, std::uint64_t hidden, std::uint64_t embedding) {
    return 4 * layers * (2 * hidden * embedding + 2 * embedding) * embedding;
}

}  // namespace skillnet
