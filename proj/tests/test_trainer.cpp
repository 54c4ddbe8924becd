#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "skillnet/benchmark.hpp"
#include "skillnet/trainer.hpp"

using namespace skillnet;

namespace {

Benchmark small_world(std::uint64_t seed, TaskKind kind = TaskKind::regression) {
    BenchmarkConfig c;
    c.seed = seed;
    c.num_tasks = 6;
    c.examples_per_task = 32;
    c.kind = kind;
    return generate_synthetic_benchmark(c);
}

bool same_values(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST(Benchmark, PlantedAllocationIsValidAndDeterministic) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        BenchmarkConfig c;
        c.seed = seed;
        const Benchmark a = generate_synthetic_benchmark(c);
        const Benchmark b = generate_synthetic_benchmark(c);
        EXPECT_TRUE(valid_planted_allocation(a.world.true_Z));
        EXPECT_EQ(a.world.true_Z, b.world.true_Z);
        EXPECT_TRUE(same_values(a.train_tasks[3].train.x, b.train_tasks[3].train.x));
        for (std::size_t i = 0; i < a.world.true_Z.rows(); ++i) {
            const std::size_t k = a.world.true_Z.row_sum(i);
            EXPECT_GE(k, c.min_skills_per_task);
            EXPECT_LE(k, c.max_skills_per_task);
        }
        for (std::size_t j = 0; j < c.num_true_skills; ++j) {
            double norm = 0.0;
            for (std::size_t d = 0; d < c.input_dim; ++d) norm += a.world.true_skills.at(j, d) * a.world.true_skills.at(j, d);
            EXPECT_NEAR(norm, 1.0, 1e-12);
        }
        ASSERT_EQ(a.train_tasks.size(), 16u);
        EXPECT_EQ(a.train_tasks[0].id, "task_00");
        EXPECT_EQ(a.train_tasks[0].train.size(), 64u);
        EXPECT_EQ(a.train_tasks[0].dev.size(), 32u);
        EXPECT_EQ(a.train_tasks[0].eval.size(), 64u);
    }
}

TEST(Benchmark, HeldOutTasksRecombineTrainingRows) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        BenchmarkConfig c;
        c.seed = seed;
        const Benchmark b = generate_synthetic_benchmark(c);
        ASSERT_EQ(b.heldout_tasks.size(), c.num_heldout_tasks);
        const BinaryMatrix& z = b.world.true_Z;
        for (std::size_t h = 0; h < b.heldout_tasks.size(); ++h) {
            const auto row = b.world.heldout_Z.row(h);
            bool union_of_two = false;
            for (std::size_t i = 0; i < z.rows() && !union_of_two; ++i) {
                for (std::size_t k = i + 1; k < z.rows() && !union_of_two; ++k) {
                    bool ok = true;
                    for (std::size_t j = 0; j < z.cols(); ++j) ok = ok && row[j] == (z.at(i, j) || z.at(k, j));
                    union_of_two = ok;
                }
            }
            EXPECT_TRUE(union_of_two) << "heldout " << h;
            ASSERT_TRUE(b.heldout_tasks[h].planted_skills.has_value());
            for (auto s : *b.heldout_tasks[h].planted_skills) EXPECT_TRUE(row[s]);
            EXPECT_EQ(b.heldout_tasks[h].id, task_name(h, true));
        }
    }
}

TEST(Benchmark, TargetsFollowThePlantedWeights) {
    const Benchmark b = small_world(4);
    const TaskSpec& t = b.train_tasks[2];
    const auto w = b.world.task_vector(b.world.true_Z.row(2));
    for (std::size_t n = 0; n < t.train.size(); ++n) {
        double y = 0.0;
        for (std::size_t d = 0; d < w.size(); ++d) y += w[d] * t.train.x.at(n, d);
        EXPECT_NEAR(t.train.y[n], y, 1e-12);
    }
}

TEST(Benchmark, SharedOracleMatchesDefinition) {
    BenchmarkConfig c;
    c.noise_sigma = 0.1;
    const Benchmark b = generate_synthetic_benchmark(c);
    const std::size_t T = b.world.true_Z.rows();
    std::vector<std::vector<double>> ws;
    for (std::size_t i = 0; i < T; ++i) ws.push_back(b.world.task_vector(b.world.true_Z.row(i)));
    std::vector<double> mean(ws[0].size(), 0.0);
    for (const auto& w : ws) {
        for (std::size_t d = 0; d < w.size(); ++d) mean[d] += w[d] / static_cast<double>(T);
    }
    double total = 0.0;
    for (const auto& w : ws) {
        for (std::size_t d = 0; d < w.size(); ++d) total += (w[d] - mean[d]) * (w[d] - mean[d]);
    }
    EXPECT_NEAR(shared_oracle_mse(b.world), total / static_cast<double>(T) + 0.01, 1e-12);
}

TEST(Benchmark, ClassificationLabelsAreBinary) {
    const Benchmark b = small_world(1, TaskKind::classification);
    std::set<double> labels(b.train_tasks[0].train.y.data().begin(), b.train_tasks[0].train.y.data().end());
    for (double v : labels) EXPECT_TRUE(v == 0.0 || v == 1.0);
    EXPECT_EQ(labels.size(), 2u);
}

TEST(Benchmark, RejectsImpossibleConfigs) {
    BenchmarkConfig c;
    c.min_skills_per_task = 3;
    c.max_skills_per_task = 2;
    EXPECT_THROW(generate_synthetic_benchmark(c), ContractError);
    c = {};
    c.num_tasks = 2;
    c.num_true_skills = 8;
    c.max_skills_per_task = 1;
    EXPECT_ANY_THROW(generate_synthetic_benchmark(c));
}

TEST(Trainer, LossDecreases) {
    const Benchmark b = small_world(2);
    TrainConfig tc;
    tc.steps = 600;
    tc.eval_interval = 100;
    tc.lr_phi = 1e-2;
    const TrainedModel tm = multitask_train(tc, b.train_tasks, ModelSpec{});
    ASSERT_GE(tm.curve.size(), 2u);
    EXPECT_LT(tm.curve.back().train_loss, 0.5 * tm.curve.front().train_loss);
    EXPECT_EQ(tm.history.size(), tc.steps);
    for (const auto& h : tm.history) {
        EXPECT_EQ(h.lr_z, tc.lr_z);
        EXPECT_EQ(h.lr_phi, tc.lr_phi);
        EXPECT_LT(h.task_id, b.train_tasks.size());
    }
}

TEST(Trainer, DeterministicForAFixedSeed) {
    const Benchmark b = small_world(3);
    TrainConfig tc;
    tc.steps = 120;
    tc.seed = 17;
    const TrainedModel a = multitask_train(tc, b.train_tasks, ModelSpec{});
    const TrainedModel c = multitask_train(tc, b.train_tasks, ModelSpec{});
    const auto pa = a.model.parameters();
    const auto pc = c.model.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(same_values(pa[i].tensor, pc[i].tensor));
    const EvalMetrics ea = evaluate(a.model, b.train_tasks[1]);
    EXPECT_EQ(ea, evaluate(a.model, b.train_tasks[1]));
    EXPECT_EQ(ea, evaluate(c.model, b.train_tasks[1]));
    EXPECT_TRUE(ea.mse.has_value());
    EXPECT_FALSE(ea.accuracy.has_value());
}

TEST(Trainer, RestartsKeepTheLowestDevLoss) {
    const Benchmark b = small_world(5);
    TrainConfig tc;
    tc.steps = 100;
    tc.restarts = 3;
    const TrainedModel tm = multitask_train(tc, b.train_tasks, ModelSpec{});
    ASSERT_EQ(tm.restart_dev_losses.size(), 3u);
    const auto best = std::min_element(tm.restart_dev_losses.begin(), tm.restart_dev_losses.end());
    EXPECT_EQ(tm.selected_restart, static_cast<std::size_t>(best - tm.restart_dev_losses.begin()));
    tc.restarts = 0;
    EXPECT_THROW(multitask_train(tc, b.train_tasks, ModelSpec{}), ContractError);
}

TEST(Trainer, FixedAllocationHasNoAllocationParameters) {
    const Benchmark b = small_world(6);
    ModelSpec spec;
    spec.kind = ModelKind::shared;
    TrainConfig tc;
    tc.steps = 50;
    const TrainedModel tm = multitask_train(tc, b.train_tasks, spec);
    for (const auto& p : tm.model.parameters()) EXPECT_NE(p.role, ParamRole::allocation);
}

TEST(Trainer, ClassificationTrainsAndReportsAccuracy) {
    const Benchmark b = small_world(7, TaskKind::classification);
    TrainConfig tc;
    tc.steps = 300;
    tc.lr_phi = 1e-2;
    const TrainedModel tm = multitask_train(tc, b.train_tasks, ModelSpec{});
    const EvalMetrics m = evaluate(tm.model, b.train_tasks[0]);
    ASSERT_TRUE(m.accuracy.has_value());
    EXPECT_GT(*m.accuracy, 0.6);
}

TEST(Trainer, TaskLossFormulas) {
    Tensor p = Tensor::vector({0.0, 2.0});
    Tensor y = Tensor::vector({1.0, 0.0});
    EXPECT_NEAR(detail::task_loss(p, y, TaskKind::regression).item(), (1.0 + 4.0) / 2.0, 1e-15);
    const double bce = (std::log(2.0) + std::log1p(std::exp(2.0))) / 2.0;
    EXPECT_NEAR(detail::task_loss(p, y, TaskKind::classification).item(), bce, 1e-12);
    EXPECT_THROW(detail::task_loss(p, Tensor::vector({1.0}), TaskKind::regression), ShapeError);
}

TEST(Trainer, StepsToThresholdAndEpochs) {
    std::vector<CurvePoint> curve{{0, 5.0, 0}, {50, 2.0, 0}, {100, 0.9, 0}, {150, 1.1, 0}};
    EXPECT_EQ(steps_to_threshold(curve, 1.0), 100u);
    EXPECT_EQ(steps_to_threshold(curve, 0.5), std::nullopt);
    const Benchmark b = small_world(1);
    EXPECT_EQ(steps_for_epochs(2, b.train_tasks, 32), 2u * 6u);
    EXPECT_THROW(steps_for_epochs(2, b.train_tasks, 0), ContractError);
}

TEST(Trainer, SampleIndicesAreDistinct) {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const auto idx = detail::sample_indices(rng, 40, 16);
        EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 16u);
        for (auto i : idx) EXPECT_LT(i, 40u);
    }
}

TEST(Trainer, EvaluateContracts) {
    const Benchmark b = small_world(1);
    MultitaskModel m(ModelSpec{}, task_ids(b.train_tasks), 1);
    Split empty;
    EXPECT_THROW(evaluate(m, 0, empty, TaskKind::regression, 1.0), ContractError);
    TaskSpec unknown = b.train_tasks[0];
    unknown.id = "nope";
    EXPECT_THROW(evaluate(m, unknown), LookupError);
}

class FewShot : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        bench_ = new Benchmark(small_world(8));
        TrainConfig tc;
        tc.steps = 300;
        trained_ = new TrainedModel(multitask_train(tc, bench_->train_tasks, ModelSpec{}));
    }
    static void TearDownTestSuite() {
        delete trained_;
        delete bench_;
    }
    static Benchmark* bench_;
    static TrainedModel* trained_;
};
Benchmark* FewShot::bench_ = nullptr;
TrainedModel* FewShot::trained_ = nullptr;

TEST_F(FewShot, AllocationOnlyLeavesSkillsAndBaseBitwiseUnchanged) {
    AdaptConfig ac;
    ac.steps = 80;
    ac.train_phi = false;
    const AdaptResult r = few_shot_adapt(trained_->model, bench_->heldout_tasks[0], ac);
    const auto before = trained_->model.parameters();
    const auto after = r.model.parameters();
    ASSERT_EQ(before.size(), after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        if (before[i].role == ParamRole::allocation) {
            // Existing rows untouched, one row added.
            EXPECT_EQ(after[i].tensor.dim(0), before[i].tensor.dim(0) + 1);
            EXPECT_TRUE(std::equal(before[i].tensor.data().begin(), before[i].tensor.data().end(),
                                   after[i].tensor.data().begin()));
        } else {
            EXPECT_TRUE(same_values(before[i].tensor, after[i].tensor)) << before[i].name;
        }
    }
    EXPECT_EQ(r.model.task_names().back(), bench_->heldout_tasks[0].id);
    EXPECT_LT(r.after.loss, r.before.loss);
}

TEST_F(FewShot, BaseIsNeverTrainedAndOriginalIsUntouched) {
    MultitaskModel original = trained_->model.clone();
    AdaptConfig ac;
    ac.steps = 60;
    ac.z_only_steps = 10;
    const AdaptResult r = few_shot_adapt(trained_->model, bench_->heldout_tasks[1], ac);
    const auto orig = original.parameters();
    const auto now = trained_->model.parameters();
    const auto adapted = r.model.parameters();
    for (std::size_t i = 0; i < orig.size(); ++i) {
        EXPECT_TRUE(same_values(orig[i].tensor, now[i].tensor));
        if (orig[i].role == ParamRole::base) {
            EXPECT_TRUE(same_values(orig[i].tensor, adapted[i].tensor));
        }
    }
}

TEST_F(FewShot, ZeroShotAndContracts) {
    AdaptConfig ac;
    ac.k_shot = 0;
    const AdaptResult r = few_shot_adapt(trained_->model, bench_->heldout_tasks[0], ac);
    EXPECT_EQ(r.before, r.after);
    EXPECT_TRUE(r.losses.empty());
    ac.k_shot = 33;
    EXPECT_THROW(few_shot_adapt(trained_->model, bench_->heldout_tasks[0], ac), ContractError);
    ac.k_shot = 4;
    EXPECT_THROW(few_shot_adapt(trained_->model, bench_->train_tasks[0], ac), ContractError);
}

TEST_F(FewShot, SupportSetIsSeeded) {
    AdaptConfig ac;
    ac.steps = 5;
    ac.seed = 3;
    const AdaptResult a = few_shot_adapt(trained_->model, bench_->heldout_tasks[2], ac);
    const AdaptResult b = few_shot_adapt(trained_->model, bench_->heldout_tasks[2], ac);
    EXPECT_TRUE(same_values(a.support.x, b.support.x));
    EXPECT_TRUE(same_values(a.support.y, b.support.y));
    EXPECT_EQ(a.after, b.after);
    EXPECT_EQ(a.support.size(), ac.k_shot);
}

TEST(FewShotBaselines, EveryKindAdapts) {
    const Benchmark b = small_world(9);
    for (auto kind : {ModelKind::private_, ModelKind::shared, ModelKind::expert, ModelKind::hypernet}) {
        ModelSpec spec;
        spec.kind = kind;
        if (kind == ModelKind::expert) spec.expert_table = expert_table_from_matrix(b.world.true_Z, task_ids(b.train_tasks));
        TrainConfig tc;
        tc.steps = 100;
        const TrainedModel tm = multitask_train(tc, b.train_tasks, spec);
        AdaptConfig ac;
        ac.steps = 50;
        const AdaptResult r = few_shot_adapt(tm.model, b.heldout_tasks[0], ac);
        EXPECT_TRUE(std::isfinite(r.after.loss)) << to_string(kind);
        EXPECT_EQ(r.losses.size(), ac.steps);
    }
}

TEST(Trainer, SparseWarmupFreezesMasks) {
    const Benchmark b = small_world(10);
    ModelSpec spec;
    spec.parameterisation = Parameterisation::sparse;
    TrainConfig tc;
    tc.steps = 60;
    tc.mask_warmup_steps = 20;
    const TrainedModel tm = multitask_train(tc, b.train_tasks, spec);
    EXPECT_FALSE(tm.model.has_unfrozen_sparse());
}

TEST(Trainer, NonFiniteLossAborts) {
    Benchmark b = small_world(11);
    std::vector<TaskSpec> tasks = b.train_tasks;
    for (auto& t : tasks) t.train.x = Tensor::constant(t.train.x.shape(), std::nan(""));
    TrainConfig tc;
    tc.steps = 10;
    EXPECT_THROW(multitask_train(tc, tasks, ModelSpec{}), TrainingError);
}
