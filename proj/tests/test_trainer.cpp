// Copyright 2026 The pdnet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <set>

#include <cmath>
#include <sstream>

#include "pdnet/pdnet.hpp"
#include "toy_problem.hpp"

using namespace pdnet;

namespace {

std::vector<Matrix> snapshot(CentralizedPolicy& p) {
    std::vector<Matrix> out;
    for (Tensor* t : p.parameters()) out.push_back(t->value());
    return out;
}

Var lagrangian_of(Tape& t, const Matrix& cost, const Matrix& g, std::vector<double> lam, std::vector<double> G) {
    return lagrangian(t.constant(cost), t.constant(g), lam, G);
}

TEST(Lagrangian, ZeroMultipliersGiveMeanCost) {
    Tape t;
    EXPECT_DOUBLE_EQ(lagrangian_of(t, Matrix{{1}, {3}}, Matrix{{5}, {7}}, {0}, {1}).scalar(), 2.0);
}

TEST(Lagrangian, ZeroSlackGivesMeanCost) {
    Tape t;
    EXPECT_DOUBLE_EQ(lagrangian_of(t, Matrix{{1}, {3}}, Matrix{{0.5, 2}, {1.5, 4}}, {7, 0.25}, {1, 3}).scalar(), 2.0);
}

TEST(Lagrangian, Arithmetic) {
    Tape t;
    EXPECT_DOUBLE_EQ(lagrangian_of(t, Matrix{{1}}, Matrix{{1.2}}, {1}, {1}).scalar(), 1.2);
}

TEST(Lagrangian, RejectsNegativeMultipliers) {
    Tape t;
    EXPECT_THROW(lagrangian_of(t, Matrix{{1}}, Matrix{{1}}, {-0.1}, {1}), std::invalid_argument);
    EXPECT_THROW(lagrangian_of(t, Matrix{{1}}, Matrix{{1}}, {0.1, 0.2}, {1, 1}), dimension_error);
}

TEST(DualStep, Arithmetic) {
    DualState d{{0.5}};
    std::vector<double> g{1.2}, G{1.0};
    PrimalDualTrainer<CentralizedPolicy>::apply_dual_step(d, g, G, 0.1);
    EXPECT_NEAR(d.lambda[0], 0.52, 1e-15);
}

TEST(DualStep, Projection) {
    DualState d{{0.0}};
    std::vector<double> g{0.0}, G{1.0};
    PrimalDualTrainer<CentralizedPolicy>::apply_dual_step(d, g, G, 1.0);
    EXPECT_EQ(d.lambda[0], 0.0);
}

TEST(DualStep, StrictlyFeasibleDrainsToZero) {
    DualState d{{1.0, 0.3}};
    std::vector<double> g{0.5, 0.9}, G{1.0, 1.0};
    double prev = 2.0;
    for (int k = 0; k < 100; ++k) {
        PrimalDualTrainer<CentralizedPolicy>::apply_dual_step(d, g, G, 0.1);
        EXPECT_LE(d.lambda[0], prev);
        prev = d.lambda[0];
    }
    EXPECT_EQ(d.lambda[0], 0.0);
    EXPECT_EQ(d.lambda[1], 0.0);
}

TEST(PrimalStep, GradientIsTheLagrangianGradient) {
    CmacProblem prob(2, 1.0, 1.0);
    TrainConfig c;
    c.batch_size = 50;
    c.seed = 4;
    Rng init(c.init_seed());
    auto pol = make_centralized_policy(prob, centralized_architecture(prob), init);
    PrimalDualTrainer<CentralizedPolicy> tr(prob, pol, c);
    tr.dual().lambda = {0.3, 0.1, 0.7};
    Rng rng(5);
    Matrix batch = prob.sample(50, rng);

    Tape t1;
    auto terms = tr.batch_lagrangian(t1, batch);
    auto info = tr.primal_step(t1, terms);
    std::vector<Matrix> g1;
    for (Tensor* p : tr.policy().parameters()) g1.push_back(p->grad());

    CentralizedPolicy ref = pol;
    Tape t2;
    Var x = ref.forward(t2, batch, Mode::train);
    Var L = lagrangian(neg(prob.utility(t2, batch, x)), prob.constraints(t2, batch, x), std::vector<double>{0.3, 0.1, 0.7},
                       prob.bounds());
    for (Tensor* p : ref.parameters()) p->zero_grad();
    t2.backward(L);
    auto ps = ref.parameters();
    ASSERT_EQ(ps.size(), g1.size());
    for (std::size_t k = 0; k < ps.size(); ++k) EXPECT_LT((ps[k]->grad() - g1[k]).cwiseAbs().maxCoeff(), 1e-12 * (1 + g1[k].cwiseAbs().maxCoeff())) << k << " " << ps[k]->grad().norm() << " " << g1[k].norm();
    EXPECT_DOUBLE_EQ(info.lagrangian, L.scalar());
    EXPECT_FALSE(info.skipped);
}

// Frozen zero multipliers reduce training to plain Adam on the mean cost.
TEST(Train, FrozenZeroDualsEqualPlainLoop) {
    CmacProblem prob(2, 1.0, 1.0);
    TrainConfig c;
    c.batch_size = 100;
    c.iterations = 300;
    c.validation_size = 500;
    c.checkpoint_interval = 100;
    c.freeze_duals = true;
    c.bn_freeze_fraction = 0;
    c.seed = 12;
    Rng init(c.init_seed());
    auto pol = make_centralized_policy(prob, centralized_architecture(prob), init);
    auto res = train(prob, pol, c);

    AdamOptions o;
    o.lr = c.lr;
    AdamState adam(o);
    Rng batch_rng(c.batch_seed());
    for (long k = 0; k < c.iterations; ++k) {
        Matrix batch = prob.sample(c.batch_size, batch_rng);
        Tape t;
        Var L = mean(neg(prob.utility(t, batch, pol.forward(t, batch, Mode::train))));
        auto ps = pol.parameters();
        for (Tensor* p : ps) p->zero_grad();
        t.backward(L);
        adam.apply(ps);
    }
    auto a = snapshot(res.policy), b = snapshot(pol);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(a[k] == b[k]) << k;
    for (double l : res.dual.lambda) EXPECT_EQ(l, 0.0);
}

TEST(Train, ConvexToyReachesKkt) {
    toy::ToyProblem prob;
    auto c = toy::toy_config(1);
    auto res = train(prob, toy::toy_policy(1), c);
    const auto& L = res.policy.net().layers()[0];
    EXPECT_NEAR(L.weight.value()(0, 0), prob.w_star(), 1e-3);
    EXPECT_NEAR(L.bias.value()(0, 0), prob.b_star(), 1e-3);
    EXPECT_NEAR(res.dual.lambda[0], prob.lambda_star(), 1e-2);
}

TEST(Train, LogShapeAndMultipliers) {
    CmacProblem prob(2, 1.0, 1.0);
    TrainConfig c;
    c.batch_size = 64;
    c.iterations = 1050;
    c.validation_size = 300;
    c.checkpoint_interval = 100;
    auto res = train_centralized(prob, c);
    ASSERT_EQ(res.log.rows.size(), 11u);
    long prev = 0;
    for (const auto& r : res.log.rows) {
        EXPECT_GT(r.iteration, prev);
        prev = r.iteration;
        EXPECT_EQ(r.slack.size(), 3u);
        for (double l : r.lambda) EXPECT_GE(l, 0.0);
        EXPECT_TRUE(std::isfinite(r.val_metric));
    }
    EXPECT_EQ(res.log.rows.back().iteration, 1050);
    std::ostringstream os;
    res.log.write_csv(os);
    std::string header = os.str().substr(0, os.str().find('\n'));
    EXPECT_EQ(header, "iteration,lagrangian,cost,slack_1,slack_2,slack_3,lambda_1,lambda_2,lambda_3,val_metric");
    EXPECT_EQ(res.status, TrainStatus::completed);
}

TEST(Train, InitialMultipliersAreZero) {
    CmacProblem prob(2, 1.0, 1.0);
    TrainConfig c;
    Rng init(c.init_seed());
    PrimalDualTrainer<CentralizedPolicy> tr(prob, make_centralized_policy(prob, centralized_architecture(prob), init), c);
    for (double l : tr.dual().lambda) EXPECT_EQ(l, 0.0);
}

TEST(Train, OversizedGradientsAreSkipped) {
    CmacProblem prob(2, 1.0, 1.0);
    TrainConfig c;
    c.batch_size = 32;
    c.iterations = 40;
    c.validation_size = 100;
    c.checkpoint_interval = 20;
    c.grad_norm_limit = 1e-12;
    c.bn_freeze_fraction = 0;
    Rng init(c.init_seed());
    auto pol = make_centralized_policy(prob, centralized_architecture(prob), init);
    auto res = train(prob, pol, c);
    EXPECT_EQ(res.skipped_steps, 40);
    auto a = snapshot(res.policy), b = snapshot(pol);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(a[k] == b[k]);
}

class FlakyProblem final : public Problem {
public:
    FlakyProblem(long fail_at) : Problem(1), fail_at_(fail_at) {}
    ProblemId id() const override { return inner_.id(); }
    std::string metric_name() const override { return inner_.metric_name(); }
    std::vector<Index> observation_dims() const override { return inner_.observation_dims(); }
    std::vector<double> bounds() const override { return inner_.bounds(); }
    std::vector<std::string> constraint_names() const override { return inner_.constraint_names(); }
    FeasibleSet node_set() const override { return inner_.node_set(); }
    Var utility(Tape& t, const Matrix& a, const Var& x) const override {
        if (++calls_ == fail_at_) throw numeric_error("injected overflow");
        return inner_.utility(t, a, x);
    }
    Var constraints(Tape& t, const Matrix& a, const Var& x) const override { return inner_.constraints(t, a, x); }
    double utility_of(std::span<const double> a, std::span<const double> x) const override {
        return inner_.utility_of(a, x);
    }
    std::vector<double> constraints_of(std::span<const double> a, std::span<const double> x) const override {
        return inner_.constraints_of(a, x);
    }
    Matrix sample(Index n, Rng& rng) const override { return inner_.sample(n, rng); }

private:
    toy::ToyProblem inner_;
    long fail_at_;
    mutable long calls_ = 0;
};

TEST(Train, DivergenceRestoresLastCheckpoint) {
    auto c = toy::toy_config(3);
    c.iterations = 1000;
    c.checkpoint_interval = 100;
    c.bn_freeze_fraction = 0;
    FlakyProblem flaky(730);
    auto bad = train(flaky, toy::toy_policy(3), c);
    EXPECT_EQ(bad.status, TrainStatus::diverged);
    EXPECT_NE(bad.message.find("injected"), std::string::npos);
    EXPECT_EQ(bad.log.rows.back().iteration, 700);

    c.iterations = 700;
    toy::ToyProblem clean;
    auto good = train(clean, toy::toy_policy(3), c);
    auto a = snapshot(bad.policy), b = snapshot(good.policy);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(a[k] == b[k]);
    EXPECT_EQ(bad.dual.lambda, good.dual.lambda);
}

TEST(Evaluate, PeakPowerWithoutInterference) {
    // Oracle: E[log(1 + h)] for h ~ Exp(1) equals e * E1(1) = -e * Ei(-1).
    const double oracle = -std::exp(1.0) * std::expint(-1.0);
    const double frozen = 0.59634736232319407;
    EXPECT_NEAR(oracle, frozen, 1e-15);

    IfcProblem prob(2, 1.0, 1.0, IfcObjective::sum_rate);
    Rng rng(21);
    Matrix a = prob.sample(1000000, rng);
    a.col(1).setZero();
    a.col(2).setZero();
    Rng hrng(22);
    Matrix x = heuristic_decisions(Heuristic::peak, prob, a, hrng);
    auto m = evaluate_decisions(prob, a, x);
    EXPECT_NEAR(m.mean_utility / 2.0, frozen, 2e-3);
    EXPECT_LT(m.ci95, 2e-3);
}

TEST(Evaluate, ZeroPolicy) {
    CmacProblem prob(2, 1.0, 1.0);
    Rng rng(23);
    Matrix a = prob.sample(100, rng);
    auto m = evaluate_decisions(prob, a, Matrix::Zero(100, 2));
    EXPECT_EQ(m.mean_utility, 0.0);
    EXPECT_TRUE(m.all_feasible());
    for (double g : m.constraint_means) EXPECT_EQ(g, 0.0);
    EXPECT_EQ(m.max_relative_violation(prob.bounds()), -1.0);
}

TEST(Evaluate, FeasibilityFlagUsesRelativeTolerance) {
    CmacProblem prob(1, 1.0, 10.0);
    Matrix a{{1, 1}, {1, 1}};
    auto ok = evaluate_decisions(prob, a, Matrix{{1.0}, {1.03}});
    EXPECT_TRUE(ok.feasible[0]);
    auto bad = evaluate_decisions(prob, a, Matrix{{1.0}, {1.05}});
    EXPECT_FALSE(bad.feasible[0]);
    EXPECT_THROW(evaluate_decisions(prob, a, Matrix::Zero(3, 1)), dimension_error);
}

TEST(Config, Scales) {
    auto p = TrainConfig::paper_scale();
    EXPECT_EQ(p.lr, 5e-5);
    EXPECT_EQ(p.batch_size, 5000);
    EXPECT_EQ(p.iterations, 500000);
    EXPECT_EQ(p.validation_size, 1000000);
    auto d = TrainConfig::desk_scale();
    EXPECT_EQ(d.batch_size, 1000);
    EXPECT_EQ(d.validation_size, 100000);
    EXPECT_EQ(d.checkpoint_interval, 500);
}

TEST(Config, Validation) {
    TrainConfig c;
    c.batch_size = 1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.lr = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.lr_dual = -1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.bn_freeze_fraction = 1.5;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.iterations = 1000;
    c.bn_freeze_fraction = 0.25;
    EXPECT_EQ(c.freeze_start(), 750);
    EXPECT_EQ(c.step_scale(0), 1.0);
    EXPECT_EQ(c.step_scale(749), 1.0);
    EXPECT_EQ(c.step_scale(750), 1.0);
    EXPECT_DOUBLE_EQ(c.step_scale(875), 0.5);
    EXPECT_DOUBLE_EQ(c.step_scale(999), 1.0 / 250);
    c.anneal = false;
    EXPECT_EQ(c.step_scale(999), 1.0);
    c.anneal = true;
    c.bn_freeze_fraction = 0;
    EXPECT_EQ(c.step_scale(999), 1.0);
}

TEST(Seeds, StreamsAreDistinct) {
    TrainConfig c;
    c.seed = 5;
    std::set<std::uint64_t> s{c.batch_seed(), c.validation_seed(), c.init_seed(), c.noise_seed()};
    EXPECT_EQ(s.size(), 4u);
}

}  // namespace
