#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "skillnet/allocation.hpp"
#include "skillnet/hierarchy.hpp"
#include "skillnet/recovery.hpp"

using namespace skillnet;

namespace {

BinaryMatrix random_binary(Rng& rng, std::size_t rows, std::size_t cols, double p = 0.4) {
    BinaryMatrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) m.set(i, j, rng.uniform() < p);
    }
    return m;
}

BinaryMatrix permute_columns(const BinaryMatrix& m, const std::vector<std::size_t>& perm) {
    BinaryMatrix out(m.rows(), perm.size());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < perm.size(); ++j) out.set(i, j, m.at(i, perm[j]));
    }
    return out;
}

// Brute force over every injective map, independent of the library search.
double brute_force_accuracy(const BinaryMatrix& learned, const BinaryMatrix& truth) {
    std::vector<std::size_t> cols(learned.cols());
    std::iota(cols.begin(), cols.end(), 0);
    long best = -1;
    do {
        long agree = 0;
        for (std::size_t j = 0; j < truth.cols(); ++j) {
            for (std::size_t i = 0; i < truth.rows(); ++i) agree += truth.at(i, j) == learned.at(i, cols[j]);
        }
        best = std::max(best, agree);
    } while (std::next_permutation(cols.begin(), cols.end()));
    return static_cast<double>(best) / static_cast<double>(truth.rows() * truth.cols());
}

}  // namespace

TEST(Allocation, InitLogitsShapeAndGrad) {
    AllocationLogits l = init_logits(3, 5, 0.25, 2);
    EXPECT_EQ(l.num_tasks(), 3u);
    EXPECT_EQ(l.num_skills(), 5u);
    EXPECT_EQ(l.layer_id, 2u);
    EXPECT_TRUE(l.z.requires_grad());
    EXPECT_EQ(l.z.at(2, 4), 0.25);
    EXPECT_THROW(init_logits(0, 2), ShapeError);
}

TEST(Allocation, GumbelSampleIsSeededAndInOpenInterval) {
    AllocationLogits l = init_logits(4, 6);
    const auto a = gumbel_sigmoid_sample(l, 0.7, 5);
    const auto b = gumbel_sigmoid_sample(l, 0.7, 5);
    const auto c = gumbel_sigmoid_sample(l, 0.7, 6);
    EXPECT_EQ(a.z_hat.shape(), (Shape{4, 6}));
    EXPECT_TRUE(std::equal(a.z_hat.data().begin(), a.z_hat.data().end(), b.z_hat.data().begin()));
    EXPECT_FALSE(std::equal(a.z_hat.data().begin(), a.z_hat.data().end(), c.z_hat.data().begin()));
    for (double v : a.z_hat.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
    EXPECT_EQ(a.draws.size(), 24u);
    EXPECT_THROW(gumbel_sigmoid_sample(l, 0.0, 1), DomainError);
}

TEST(Allocation, ExtremeDrawsAreClamped) {
    Tensor z = Tensor::vector({0.0, 0.0});
    Tensor y = gumbel_sigmoid(z, 1.0, {0.0, 1.0});
    EXPECT_TRUE(all_finite(y));
    EXPECT_GT(y[0], 0.0);
    EXPECT_LT(y[1], 1.0);
    EXPECT_THROW(gumbel_sigmoid(z, 1.0, {0.5}), ShapeError);
}

TEST(Allocation, LowTemperatureApproachesHardSample) {
    Rng rng(1);
    Tensor z = Tensor::vector({0.3, -0.2, 1.0});
    const auto u = draw_uniforms(rng, 3);
    Tensor cold = gumbel_sigmoid(z, 1e-3, u);
    for (std::size_t j = 0; j < 3; ++j) {
        const double logit = z[j] + std::log(u[j]) - std::log1p(-u[j]);
        EXPECT_NEAR(cold[j], logit > 0 ? 1.0 : 0.0, 1e-6);
    }
}

TEST(Allocation, NormalizeRowsSumsToOne) {
    Rng rng(2);
    Tensor z(Shape{5, 4}, [&] {
        std::vector<double> v(20);
        for (auto& x : v) x = rng.uniform(0.01, 1.0);
        return v;
    }());
    Tensor w = normalize_rows(z);
    for (std::size_t i = 0; i < 5; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 4; ++j) s += w.at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-14);
    }
    EXPECT_THROW(normalize_rows(Tensor::matrix({{1, 1}, {0, 0}})), DegenerateError);
    EXPECT_THROW(normalize_row(Tensor::vector({0, 1e-13})), DegenerateError);
}

TEST(Allocation, HardenRoundsHalfUp) {
    BinaryMatrix b = harden(Tensor::matrix({{0.5, 0.4999}, {0.51, 0.0}}));
    EXPECT_TRUE(b.at(0, 0));
    EXPECT_FALSE(b.at(0, 1));
    EXPECT_TRUE(b.at(1, 0));
    EXPECT_FALSE(b.at(1, 1));
}

TEST(Metrics, DomainChecks) {
    EXPECT_THROW(metric_discreteness(Tensor::matrix({{1.2}})), DomainError);
    EXPECT_THROW(metric_usage(Tensor::zeros({2, 2})), DegenerateError);
    EXPECT_EQ(metric_usage(Tensor::matrix({{0.3}, {0.9}})), 1.0);
}

TEST(Metrics, DiscretenessIsSymmetricAndBounded) {
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
        const double p = rng.uniform();
        const double a = metric_discreteness(Tensor::matrix({{p}}));
        const double b = metric_discreteness(Tensor::matrix({{1 - p}}));
        EXPECT_NEAR(a, b, 1e-12);
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0 + 1e-15);
    }
}

TEST(TauSchedule, LinearAnneal) {
    TauSchedule s{2.0, 0.2, 100};
    EXPECT_EQ(s.at(0), 2.0);
    EXPECT_NEAR(s.at(50), 1.1, 1e-12);
    EXPECT_NEAR(s.at(100), 0.2, 1e-12);
    EXPECT_NEAR(s.at(1000), 0.2, 1e-12);
    EXPECT_EQ(TauSchedule{}.at(7), 1.0);
}

TEST(Recovery, ExhaustiveMatchesBruteForce) {
    Rng rng(9);
    for (int t = 0; t < 60; ++t) {
        const std::size_t k = 2 + rng.index(3);
        const std::size_t extra = rng.index(2);
        BinaryMatrix truth = random_binary(rng, 8, k);
        BinaryMatrix learned = random_binary(rng, 8, k + extra);
        EXPECT_NEAR(recovery_exhaustive(learned, truth).cell_accuracy, brute_force_accuracy(learned, truth), 1e-15);
    }
}

TEST(Recovery, HungarianAgreesWithExhaustive) {
    Rng rng(10);
    for (int t = 0; t < 200; ++t) {
        const std::size_t k = 1 + rng.index(4);
        BinaryMatrix truth = random_binary(rng, 10, k);
        BinaryMatrix learned = random_binary(rng, 10, k + rng.index(3));
        const auto e = recovery_exhaustive(learned, truth);
        const auto h = recovery_hungarian(learned, truth);
        EXPECT_NEAR(e.cell_accuracy, h.cell_accuracy, 1e-15);
        std::set<std::size_t> used(h.assignment.begin(), h.assignment.end());
        EXPECT_EQ(used.size(), k);  // injective
    }
}

TEST(Recovery, PermutationInvarianceAndPerfectScore) {
    Rng rng(12);
    for (int t = 0; t < 30; ++t) {
        BinaryMatrix truth = random_binary(rng, 12, 4);
        std::vector<std::size_t> perm{0, 1, 2, 3};
        for (std::size_t i = 3; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
        BinaryMatrix learned = permute_columns(truth, perm);
        const auto s = skill_recovery_score(learned, truth);
        EXPECT_EQ(s.cell_accuracy, 1.0);
        for (std::size_t j = 0; j < 4; ++j) {
            for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(learned.at(i, s.assignment[j]), truth.at(i, j));
        }
        BinaryMatrix noisy = random_binary(rng, 12, 4);
        EXPECT_EQ(skill_recovery_score(noisy, truth).cell_accuracy,
                  skill_recovery_score(permute_columns(noisy, perm), truth).cell_accuracy);
    }
}

TEST(Recovery, ArgumentContracts) {
    EXPECT_THROW(skill_recovery_score(BinaryMatrix(3, 2), BinaryMatrix(4, 2)), ShapeError);
    EXPECT_THROW(skill_recovery_score(BinaryMatrix(3, 1), BinaryMatrix(3, 2)), ContractError);
    EXPECT_EQ(injective_map_count(3, 5), 60.0);
}

TEST(Recovery, LargeInventoryUsesHungarian) {
    Rng rng(13);
    BinaryMatrix truth = random_binary(rng, 20, 10);
    BinaryMatrix learned = permute_columns(truth, {9, 8, 7, 6, 5, 4, 3, 2, 1, 0});
    EXPECT_EQ(skill_recovery_score(learned, truth).cell_accuracy, 1.0);
}

TEST(Hierarchy, GroupsPartitionTheTasks) {
    Rng rng(14);
    for (int t = 0; t < 20; ++t) {
        BinaryMatrix z = random_binary(rng, 9, 4, 0.5);
        std::vector<std::string> names;
        for (std::size_t i = 0; i < 9; ++i) names.push_back("t" + std::to_string(8 - i));
        const auto groups = group_tasks(z, names);
        std::multiset<std::string> seen;
        std::set<std::string> keys;
        for (const auto& g : groups) {
            EXPECT_TRUE(std::is_sorted(g.tasks.begin(), g.tasks.end()));
            EXPECT_TRUE(keys.insert(g.key).second);
            for (const auto& name : g.tasks) {
                seen.insert(name);
                const std::size_t row = 8 - static_cast<std::size_t>(std::stoi(name.substr(1)));
                EXPECT_EQ(subset_key(z.row(row)), g.key);
            }
        }
        EXPECT_EQ(seen, std::multiset<std::string>(names.begin(), names.end()));
    }
}

TEST(Hierarchy, RenderShowsImmediateCover) {
    BinaryMatrix z = BinaryMatrix::from_rows({{1, 1, 1}, {1, 1, 0}, {1, 0, 0}, {0, 0, 1}});
    const auto groups = group_tasks(z, {"abc", "ab", "a", "c"});
    const std::string text = render_hierarchy(groups);
    EXPECT_NE(text.find("111 {0,1,2}: abc\n  > 110 {0,1}\n  > 001 {2}\n"), std::string::npos) << text;
    EXPECT_NE(text.find("110 {0,1}: ab\n  > 100 {0}\n"), std::string::npos) << text;
    const auto j = hierarchy_json(groups);
    EXPECT_EQ(j["100"][0], "a");
    EXPECT_THROW(group_tasks(z, {"x"}), ShapeError);
}
