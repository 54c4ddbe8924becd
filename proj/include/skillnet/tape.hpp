#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "skillnet/errors.hpp"
#include "skillnet/tensor.hpp"

namespace skillnet {

// Reverse-mode tape. Operations executed while a tape is active on the current
// thread append a node; backward() replays the nodes in reverse order.
//
// Repeated backward() calls on the same tape accumulate into leaf gradients
// (intermediate gradients are recomputed from scratch every call), so a loss
// and a regulariser can be back-propagated separately and summed.
class Tape {
  public:
    using Impl = std::shared_ptr<detail::TensorImpl>;

    struct Node {
        std::vector<Impl> inputs;
        Impl output;
        // Reads output->grad and accumulates into the inputs' grads.
        std::function<void()> backward;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape() {
        if (active_slot() == this) active_slot() = previous_;
    }

    // RAII activation; restores the previously active tape on destruction.
    class Scope {
      public:
        explicit Scope(Tape& tape) : tape_(tape) {
            tape_.previous_ = active_slot();
            active_slot() = &tape_;
        }
        ~Scope() { active_slot() = tape_.previous_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

      private:
        Tape& tape_;
    };

    static Tape* active() { return active_slot(); }

    void record(Node node) { nodes_.push_back(std::move(node)); }

    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    void reset() { nodes_.clear(); }

    // Number of node callbacks executed by the most recent backward().
    std::size_t last_visits() const { return last_visits_; }

    void backward(const Tensor& loss) {
        if (!loss.defined() || loss.numel() != 1) {
            throw ContractError("backward: loss must be a scalar, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
        }
        if (nodes_.empty()) throw ContractError("backward: tape is empty");
        for (auto& n : nodes_) {
            n.output->grad.assign(n.output->data.size(), 0.0);
            n.output->grad_touched = false;
        }
        const auto& root = loss.impl();
        root->ensure_grad();
        root->grad[0] += 1.0;
        root->grad_touched = true;
        last_visits_ = 0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            ++last_visits_;
            if (!it->output->grad_touched) continue;
            it->backward();
        }
    }

    // Suspends recording on this thread for the lifetime of the guard.
    class Pause {
      public:
        Pause() : saved_(active_slot()) { active_slot() = nullptr; }
        ~Pause() { active_slot() = saved_; }
        Pause(const Pause&) = delete;
        Pause& operator=(const Pause&) = delete;

      private:
        Tape* saved_;
    };

  private:
    static Tape*& active_slot() {
        thread_local Tape* slot = nullptr;
        return slot;
    }

    std::vector<Node> nodes_;
    Tape* previous_ = nullptr;
    std::size_t last_visits_ = 0;
};

// Convenience: backward through the currently active tape.
inline void backward(const Tensor& loss) {
    Tape* tape = Tape::active();
    if (tape == nullptr) throw ContractError("backward: no active tape");
    tape->backward(loss);
}

}  // namespace skillnet
