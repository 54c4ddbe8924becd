#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "skillnet/errors.hpp"
#include "skillnet/tensor.hpp"

namespace skillnet {

enum class ParamRole { allocation, skill, base, embedding, generator };

struct NamedParam {
    std::string name;
    Tensor tensor;
    ParamRole role;
};

struct ParamGroup {
    std::string name;
    std::vector<Tensor> params;
    double lr = 1e-3;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with per-group learning rates. A parameter is only stepped when some
// gradient reached it since the last zero_grad(), mirroring frameworks that
// leave untouched gradients unset.
class Adam {
  public:
    explicit Adam(std::vector<ParamGroup> groups, AdamConfig config = {})
        : groups_(std::move(groups)), config_(config) {
        std::set<const void*> seen;
        for (const auto& g : groups_) {
            if (!(g.lr > 0)) throw DomainError("adam: learning rate of group '" + g.name + "' must be positive");
            state_.emplace_back();
            for (const auto& p : g.params) {
                if (!seen.insert(p.id()).second) {
                    throw ContractError("adam: parameter assigned to more than one group");
                }
                state_.back().push_back(Moments{std::vector<double>(p.numel(), 0.0),
                                                std::vector<double>(p.numel(), 0.0), 0});
            }
        }
    }

    void step() {
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            const double lr = groups_[g].lr;
            for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
                Tensor& param = groups_[g].params[p];
                if (!param.grad_touched()) continue;
                Moments& s = state_[g][p];
                ++s.t;
                const auto grad = param.grad();
                auto values = param.mutable_data();
                const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(s.t));
                const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(s.t));
                for (std::size_t i = 0; i < values.size(); ++i) {
                    s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * grad[i];
                    s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
                    const double m_hat = s.m[i] / c1;
                    const double v_hat = s.v[i] / c2;
                    values[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
                }
            }
        }
    }

    void zero_grad() {
        for (auto& g : groups_) {
            for (auto& p : g.params) p.zero_grad();
        }
    }

    std::vector<ParamGroup>& groups() { return groups_; }
    const std::vector<ParamGroup>& groups() const { return groups_; }

    double lr(const std::string& group) const {
        for (const auto& g : groups_) {
            if (g.name == group) return g.lr;
        }
        return 0.0;
    }

  private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
        std::size_t t = 0;
    };

    std::vector<ParamGroup> groups_;
    std::vector<std::vector<Moments>> state_;
    AdamConfig config_;
};

struct OptimizerGroups {
    ParamGroup group_z;
    ParamGroup group_phi;

    bool two_speed() const { return group_z.lr > group_phi.lr; }

    Adam make_adam(AdamConfig config = {}) const {
        std::vector<ParamGroup> groups;
        if (!group_z.params.empty()) groups.push_back(group_z);
        if (!group_phi.params.empty()) groups.push_back(group_phi);
        return Adam(std::move(groups), config);
    }
};

// Allocation logits go to group "z" with lr_z; every other parameter to "phi".
inline OptimizerGroups build_two_speed_groups(const std::vector<NamedParam>& params, double lr_z, double lr_phi) {
    if (!(lr_z > 0) || !(lr_phi > 0)) throw DomainError("two-speed groups: learning rates must be positive");
    OptimizerGroups groups{{"z", {}, lr_z}, {"phi", {}, lr_phi}};
    std::set<const void*> seen;
    for (const auto& p : params) {
        if (!seen.insert(p.tensor.id()).second) {
            throw ContractError("two-speed groups: parameter '" + p.name + "' listed twice");
        }
        (p.role == ParamRole::allocation ? groups.group_z : groups.group_phi).params.push_back(p.tensor);
    }
    return groups;
}

}  // namespace skillnet
