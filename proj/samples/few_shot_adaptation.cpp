// Compare how quickly the skilled, shared and private models fit an unseen task
// from 16 examples, after multitask training on the same planted world.
#include <iostream>

#include "skillnet/skillnet.hpp"

using namespace skillnet;

int main() {
    BenchmarkConfig bc;
    bc.seed = 1;
    const Benchmark bench = generate_synthetic_benchmark(bc);

    TrainConfig tc;
    tc.steps = 20000;
    tc.tau = TauSchedule{2.0, 0.2, tc.steps};
    tc.seed = 1;

    AdaptConfig ac;
    ac.steps = 500;
    ac.k_shot = 16;
    ac.tau = tc.tau.at(tc.steps);

    for (ModelKind kind : {ModelKind::skilled, ModelKind::shared, ModelKind::private_}) {
        ModelSpec spec;
        spec.kind = kind;
        spec.hidden_dim = 0;
        spec.num_skills = bc.num_true_skills;
        TrainConfig run = tc;
        run.restarts = kind == ModelKind::skilled ? 8 : 1;  // only the learned allocation has bad optima
        const TrainedModel tm = multitask_train(run, bench.train_tasks, spec);
        double before = 0.0, after = 0.0;
        for (const TaskSpec& task : bench.heldout_tasks) {
            const AdaptResult r = few_shot_adapt(tm.model, task, ac);
            before += r.before.loss;
            after += r.after.loss;
        }
        const double n = static_cast<double>(bench.heldout_tasks.size());
        std::cout << to_string(kind) << ": held-out loss " << before / n << " -> " << after / n << "\n";
    }
    return 0;
}
