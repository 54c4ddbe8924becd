#include <gtest/gtest.h>

#include <cmath>

#include "skillnet/grad_check.hpp"
#include "skillnet/ops.hpp"
#include "skillnet/tape.hpp"

using namespace skillnet;

namespace {

Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(shape, std::move(v));
}

// Triple-loop oracle.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<double> out(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t p = 0; p < k; ++p) out[i * m + j] += a.at(i, p) * b.at(p, j);
        }
    }
    return out;
}

}  // namespace

TEST(Tensor, ConstructionChecksShape) {
    EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), ShapeError);
    EXPECT_THROW(Tensor::make({0, 3}, fill::Zeros{}), ShapeError);
    EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), ShapeError);
    Tensor t = Tensor::constant({2, 2}, 1.5);
    EXPECT_EQ(t.numel(), 4u);
    EXPECT_EQ(t.at(1, 1), 1.5);
    EXPECT_THROW(t.item(), ContractError);
}

TEST(Tensor, CopiesAliasClonesDoNot) {
    Tensor a = Tensor::vector({1, 2, 3});
    Tensor alias = a;
    Tensor copy = a.clone();
    a.mutable_data()[0] = 9;
    EXPECT_EQ(alias[0], 9);
    EXPECT_EQ(copy[0], 1);
    EXPECT_TRUE(alias.same_as(a));
    EXPECT_FALSE(copy.same_as(a));
}

TEST(Tensor, FillRulesAreSeededAndBounded) {
    Tensor a = Tensor::make({4, 9}, fill::KaimingUniform{7});
    Tensor b = Tensor::make({4, 9}, fill::KaimingUniform{7});
    Tensor c = Tensor::make({4, 9}, fill::KaimingUniform{8});
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
    const double bound = std::sqrt(6.0 / 9.0);
    for (double v : a.data()) EXPECT_LE(std::abs(v), bound);
    Tensor u = Tensor::make({100}, fill::Uniform{2.0, 3.0, 1});
    for (double v : u.data()) {
        EXPECT_GE(v, 2.0);
        EXPECT_LT(v, 3.0);
    }
}

TEST(Rng, DerivedSeedsAreDistinctAndStable) {
    EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
    EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
    EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
}

TEST(Ops, MatmulMatchesNaiveOracle) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_tensor(rng, {1 + rng.index(5), 1 + rng.index(6)});
        Tensor b = random_tensor(rng, {a.dim(1), 1 + rng.index(4)});
        Tensor c = matmul(a, b);
        const auto want = naive_matmul(a, b);
        ASSERT_EQ(c.numel(), want.size());
        for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(c[i], want[i], 1e-12);
    }
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Ops, BroadcastingAndScalars) {
    Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    Tensor r = m + Tensor::vector({10, 20, 30});
    EXPECT_EQ(r.at(1, 2), 36);
    Tensor s = 2.0 * m - 1.0;
    EXPECT_EQ(s.at(0, 0), 1);
    Tensor d = Tensor::vector({6}) / m;
    EXPECT_EQ(d.shape(), m.shape());
    EXPECT_EQ(d.at(1, 0), 1.5);
    EXPECT_THROW(m + Tensor::vector({1, 2}), ShapeError);
}

TEST(Ops, ReductionsAlongAxes) {
    Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    EXPECT_EQ(sum(m).item(), 21);
    EXPECT_EQ(mean(m).item(), 3.5);
    Tensor c = sum(m, 0);
    EXPECT_EQ(c.shape(), (Shape{3}));
    EXPECT_EQ(c[2], 9);
    Tensor r = mean(m, 1);
    EXPECT_EQ(r.shape(), (Shape{2}));
    EXPECT_EQ(r[1], 5);
}

TEST(Ops, StructuralOps) {
    Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    Tensor t = transpose(m);
    EXPECT_EQ(t.shape(), (Shape{3, 2}));
    EXPECT_EQ(t.at(2, 1), 6);
    Tensor flat = reshape(m, {6});
    EXPECT_EQ(flat[4], 5);  // row-major
    EXPECT_THROW(reshape(m, {4}), ShapeError);
    Tensor sl = slice(flat, 1, 4);
    EXPECT_EQ(sl.numel(), 3u);
    EXPECT_EQ(sl[0], 2);
    Tensor row = select(m, 1);
    EXPECT_EQ(row[0], 4);
    Tensor st = stack({row, select(m, 0)});
    EXPECT_EQ(st.at(1, 2), 3);
}

TEST(Ops, UnaryValues) {
    EXPECT_NEAR(sigmoid(Tensor::scalar(0)).item(), 0.5, 1e-15);
    EXPECT_NEAR(softplus(Tensor::scalar(800)).item(), 800, 1e-12);
    EXPECT_NEAR(softplus(Tensor::scalar(-800)).item(), 0, 1e-300);
    EXPECT_NEAR(sigmoid(Tensor::scalar(-800)).item(), 0, 1e-300);
    EXPECT_NEAR(lgamma(Tensor::scalar(5)).item(), std::log(24.0), 1e-12);
    EXPECT_EQ(relu(Tensor::vector({-1, 2}))[0], 0);
    EXPECT_TRUE(std::isnan(relu(Tensor::vector({std::nan("")}))[0]));
}

TEST(Tape, GradientsAccumulateAcrossBackwardCalls) {
    Tensor x = Tensor::vector({1, 2, 3});
    x.set_requires_grad(true);
    for (int i = 0; i < 2; ++i) {
        Tape tape;
        Tape::Scope scope(tape);
        tape.backward(sum(square(x)));
    }
    const auto g = x.grad();
    EXPECT_EQ(g[0], 4);
    EXPECT_EQ(g[2], 12);
    EXPECT_TRUE(x.grad_touched());
    x.zero_grad();
    EXPECT_FALSE(x.grad_touched());
    EXPECT_EQ(x.grad()[1], 0);
}

TEST(Tape, PauseStopsRecording) {
    Tensor x = Tensor::vector({1, 2});
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    {
        Tape::Pause pause;
        (void)sum(x * x);
    }
    EXPECT_TRUE(tape.empty());
    (void)sum(x * x);
    EXPECT_FALSE(tape.empty());
}

TEST(Tape, BackwardRejectsNonScalar) {
    Tensor x = Tensor::vector({1, 2});
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor y = x * x;
    EXPECT_ANY_THROW(tape.backward(y));
}

TEST(Tape, SharedSubexpressionGetsBothContributions) {
    // f(x) = sum(x * x + x) -> df/dx = 2x + 1
    Tensor x = Tensor::vector({0.5, -1.5});
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor y = x * x + x;
    tape.backward(sum(y));
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], -2.0);
}

TEST(GradCheck, AgreesWithFiniteDifferencesOnComposite) {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor(rng, {3, 3}, 0.3, 1.5);
        Tensor w = random_tensor(rng, {3, 2});
        auto f = [&](const Tensor& t) {
            return mean(softplus(matmul(log(t), w))) + sum(tanh(t) / (t + 1.0)) + sum(exp(neg(t)), std::nullopt);
        };
        EXPECT_LT(grad_check(f, x), 1e-6);
    }
}

TEST(GradCheck, DetectsAWrongGradient) {
    // A detached factor drops half the analytic gradient.
    auto f = [](const Tensor& t) { return sum(t * t.detach()); };
    EXPECT_GT(grad_check(f, Tensor::vector({1.0, 2.0})), 0.4);
}

TEST(Tensor, AllFinite) {
    EXPECT_TRUE(all_finite(Tensor::vector({1, 2})));
    EXPECT_FALSE(all_finite(Tensor::vector({1, std::nan("")})));
    EXPECT_FALSE(all_finite(exp(Tensor::vector({1000.0}))));
    EXPECT_THROW(log(Tensor::vector({0.0})), DomainError);
}
