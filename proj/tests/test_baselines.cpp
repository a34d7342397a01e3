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

#include <cmath>

#include "pdnet/pdnet.hpp"

using namespace pdnet;

namespace {

double cmac_lagrangian(std::span<const double> h, std::span<const double> c, std::span<const double> p) {
    double s = 0, price = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        s += h[i] * p[i];
        price += c[i] * p[i];
    }
    return std::log1p(s) - price;
}

// Brute force over [0, 5]^2 with a 1e-2 step.
std::vector<double> grid_inner(std::span<const double> h, std::span<const double> c) {
    std::vector<double> best{0, 0}, p(2);
    double bv = cmac_lagrangian(h, c, best);
    for (int a = 0; a <= 500; ++a)
        for (int b = 0; b <= 500; ++b) {
            p = {a * 1e-2, b * 1e-2};
            const double v = cmac_lagrangian(h, c, p);
            if (v > bv) bv = v, best = p;
        }
    return best;
}

TEST(CmacInner, SingleActiveUser) {
    std::vector<double> h{2, 1}, c{1, 1};
    auto p = cmac_inner_solution(h, c);
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 0.0);
    auto g = grid_inner(h, c);
    EXPECT_NEAR(g[0], 0.5, 1e-3);
    EXPECT_NEAR(g[1], 0.0, 1e-3);
}

TEST(CmacInner, ExpensivePowerStaysOff) {
    std::vector<double> h{0.5, 0.2}, c{0.5, 0.4};
    auto p = cmac_inner_solution(h, c);
    EXPECT_EQ(p[0], 0.0);
    EXPECT_EQ(p[1], 0.0);
}

TEST(CmacInner, ValidatesInput) {
    std::vector<double> h{1, 1}, c{1};
    EXPECT_THROW(cmac_inner_solution(h, c), dimension_error);
    std::vector<double> h0{0, 1}, c2{1, 1};
    EXPECT_THROW(cmac_inner_solution(h0, c2), std::invalid_argument);
}

// No point of a box grid around the closed form does better.
TEST(CmacInner, MatchesExhaustiveSearch) {
    Rng rng(31);
    std::exponential_distribution<double> e(1.0);
    std::uniform_real_distribution<double> u(0.05, 2.0);
    for (int k = 0; k < 1000; ++k) {
        std::vector<double> h{e(rng) + 1e-3, e(rng) + 1e-3}, c{u(rng), u(rng)};
        auto p = cmac_inner_solution(h, c);
        const double v = cmac_lagrangian(h, c, p);
        std::vector<double> q(2);
        for (int a = 0; a <= 60; ++a)
            for (int b = 0; b <= 60; ++b) {
                q = {a * 0.1 * std::min(5.0, p[0] + 1), b * 0.1 * std::min(5.0, p[1] + 1)};
                ASSERT_LE(cmac_lagrangian(h, c, q), v + 1e-12) << k;
            }
    }
}

TEST(CmacInner, RandomDrawsAgainstFineGrid) {
    Rng rng(32);
    std::exponential_distribution<double> e(1.0);
    std::uniform_real_distribution<double> u(0.1, 1.5);
    for (int k = 0; k < 20; ++k) {
        std::vector<double> h{e(rng) + 0.05, e(rng) + 0.05}, c{u(rng), u(rng)};
        auto p = cmac_inner_solution(h, c);
        auto g = grid_inner(h, c);
        if (p[0] > 5 || p[1] > 5) continue;
        EXPECT_NEAR(cmac_lagrangian(h, c, p), cmac_lagrangian(h, c, g), 1e-4) << k;
        EXPECT_GE(cmac_lagrangian(h, c, p), cmac_lagrangian(h, c, g) - 1e-12) << k;
    }
}

TEST(CmacOracle, FeasibleAndComplementary) {
    auto prob = make_problem(ProblemId::p3, 2, SweepPoint{5, 1, 1, 0});
    const auto& cm = dynamic_cast<const CmacProblem&>(*prob);
    Rng rng(33);
    Matrix s = cm.sample(10000, rng);
    auto res = cmac_dual_oracle(cm, s);
    ASSERT_TRUE(res.converged) << res.diagnostics;
    const auto G = cm.bounds();
    std::vector<double> y = res.lambda;
    y.push_back(res.mu);
    for (std::size_t k = 0; k < G.size(); ++k) {
        const double slack = (res.metrics.constraint_means[k] - G[k]) / G[k];
        EXPECT_LE(slack, 1e-3) << k;
        if (y[k] > 1e-9) EXPECT_GE(slack, -1e-3) << k << " lambda " << y[k];
    }
    EXPECT_LE(res.max_violation, 1e-3);
    // per-realization constraints are tighter than averaged ones
    Metrics st = evaluate_decisions(cm, s, short_term_decisions(cm, s));
    EXPECT_GE(res.metrics.mean_utility, st.mean_utility);
}

TEST(CmacOracle, DecisionsMaximizeLagrangianPointwise) {
    CmacProblem prob(2, 2.0, 1.0);
    Rng rng(34);
    Matrix s = prob.sample(200, rng);
    std::vector<double> lambda{0.4, 0.7};
    const double mu = 0.3;
    Matrix x = cmac_dual_policy(s, lambda, mu);
    for (Index r = 0; r < s.rows(); ++r) {
        auto ch = cmac_channel_from_row(row_span(s, r));
        std::vector<double> c{lambda[0] + mu * ch.g[0], lambda[1] + mu * ch.g[1]};
        std::vector<double> p{x(r, 0), x(r, 1)};
        auto want = cmac_inner_solution(ch.h, c);
        EXPECT_DOUBLE_EQ(p[0], want[0]);
        EXPECT_DOUBLE_EQ(p[1], want[1]);
    }
}

TEST(ShortTerm, Examples) {
    std::vector<double> h{1, 1}, g{1, 1};
    auto p = cmac_short_term(h, g, 2.0, 1e9);
    EXPECT_EQ(p, (std::vector<double>{2, 2}));
    std::vector<double> h2{1, 2};
    p = cmac_short_term(h2, g, 1.0, 1.0);
    EXPECT_DOUBLE_EQ(p[0], 0.0);
    EXPECT_DOUBLE_EQ(p[1], 1.0);
    p = cmac_short_term(h2, g, 1.0, 0.0);
    EXPECT_EQ(p, (std::vector<double>{0, 0}));
}

TEST(ShortTerm, FeasiblePerRealization) {
    CmacProblem prob(3, 1.5, 0.8);
    Rng rng(35);
    Matrix s = prob.sample(2000, rng);
    Matrix x = short_term_decisions(prob, s);
    for (Index r = 0; r < s.rows(); ++r) {
        auto ch = cmac_channel_from_row(row_span(s, r));
        double interf = 0;
        for (Index i = 0; i < 3; ++i) {
            EXPECT_GE(x(r, i), 0.0);
            EXPECT_LE(x(r, i), 1.5 + 1e-12);
            interf += ch.g[i] * x(r, i);
        }
        EXPECT_LE(interf, 0.8 + 1e-9);
    }
}

TEST(Wmmse, SingleUserUsesPeak) {
    IfcChannel H(1);
    H(0, 0) = 0.7;
    auto r = wmmse(H, 3.0, 1.0);
    EXPECT_NEAR(r.p[0], 3.0, 1e-6);
}

TEST(Wmmse, NoInterferenceUsesPeak) {
    IfcChannel H(3);
    H(0, 0) = 1.2, H(1, 1) = 0.3, H(2, 2) = 2.0;
    auto r = wmmse(H, 2.0, 1.0);
    for (double p : r.p) EXPECT_NEAR(p, 2.0, 1e-6);
}

TEST(Wmmse, HistoryNondecreasingAndBoxed) {
    IfcProblem prob(3, 1, 1, IfcObjective::sum_rate);
    Rng rng(36);
    Matrix s = prob.sample(200, rng);
    for (Index r = 0; r < s.rows(); ++r) {
        auto res = wmmse(ifc_channel_from_row(row_span(s, r)), 1.0, 1.0);
        for (std::size_t k = 1; k < res.history.size(); ++k)
            ASSERT_GE(res.history[k], res.history[k - 1] - 1e-10) << r << " " << k;
        for (double p : res.p) {
            EXPECT_GE(p, 0.0);
            EXPECT_LE(p, 1.0);
        }
    }
}

TEST(Wmmse, CloseToGridOnTwoUsers) {
    IfcProblem prob(2, 1, 1, IfcObjective::sum_rate);
    Rng rng(37);
    Matrix s = prob.sample(300, rng);
    double sum_w = 0, sum_g = 0;
    for (Index r = 0; r < s.rows(); ++r) {
        auto H = ifc_channel_from_row(row_span(s, r));
        const double w = ifc_sum_cost(H, wmmse(H, 1.0, 1.0).p);
        const double g = grid_oracle(H, IfcObjective::sum_rate, 1.0, 100, 2).value;
        EXPECT_LE(w, g + 1e-6);
        sum_w += w;
        sum_g += g;
    }
    EXPECT_GE(sum_w / sum_g, 0.97);
}

TEST(Grid, IdentityChannelUsesPeak) {
    IfcChannel H(2);
    H(0, 0) = H(1, 1) = 1;
    auto r = grid_oracle(H, IfcObjective::sum_rate, 1.0, 10);
    EXPECT_EQ(r.p, (std::vector<double>{1, 1}));
    EXPECT_NEAR(r.value, 2 * std::log(2.0), 1e-12);
    r = grid_oracle(H, IfcObjective::min_rate, 1.0, 10);
    EXPECT_NEAR(r.value, std::log(2.0), 1e-12);
}

TEST(Grid, StrongInterferenceSwitchesOneOff) {
    IfcChannel H(2);
    H(0, 0) = H(1, 1) = 1;
    H(0, 1) = H(1, 0) = 50;
    auto r = grid_oracle(H, IfcObjective::sum_rate, 1.0, 20);
    EXPECT_DOUBLE_EQ(r.value, std::log(2.0));
    EXPECT_EQ(std::min(r.p[0], r.p[1]), 0.0);
    EXPECT_EQ(std::max(r.p[0], r.p[1]), 1.0);
}

TEST(Grid, BeatsHeuristicsAndRejectsLargeN) {
    IfcProblem prob(3, 1, 1, IfcObjective::min_rate);
    Rng rng(38);
    Matrix s = prob.sample(50, rng);
    Matrix peak = heuristic_decisions(Heuristic::peak, prob, s, rng);
    Matrix rnd = heuristic_decisions(Heuristic::random, prob, s, rng);
    for (Index r = 0; r < s.rows(); ++r) {
        auto H = ifc_channel_from_row(row_span(s, r));
        const double g = grid_oracle(H, IfcObjective::min_rate, 1.0, 20, 1).value;
        std::vector<double> a{peak(r, 0), peak(r, 1), peak(r, 2)}, b{rnd(r, 0), rnd(r, 1), rnd(r, 2)};
        EXPECT_GE(g, ifc_minrate_cost(H, a));
        EXPECT_GE(g, ifc_minrate_cost(H, b));
    }
    EXPECT_THROW(grid_oracle(IfcChannel(4), IfcObjective::sum_rate, 1.0, 4), std::invalid_argument);
}

TEST(Heuristics, Values) {
    IfcProblem ifc(3, 1, 2, IfcObjective::sum_rate);
    Rng rng(39);
    Matrix s = ifc.sample(100000, rng);
    Matrix pk = heuristic_decisions(Heuristic::peak, ifc, s, rng);
    EXPECT_EQ(pk.minCoeff(), 2.0);
    EXPECT_EQ(pk.maxCoeff(), 2.0);
    Matrix rnd = heuristic_decisions(Heuristic::random, ifc, s, rng);
    EXPECT_NEAR(rnd.mean(), 1.0, 0.01);
    EXPECT_GE(rnd.minCoeff(), 0.0);
    EXPECT_LE(rnd.maxCoeff(), 2.0);

    CmacProblem cm(1, 5.0, 1.0);
    Matrix o{{1.0, 2.0}, {1.0, 0.1}};
    Matrix fx = heuristic_decisions(Heuristic::fixed_cmac, cm, o, rng);
    EXPECT_DOUBLE_EQ(fx(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(fx(1, 0), 5.0);
    EXPECT_THROW(heuristic_decisions(Heuristic::fixed_cmac, ifc, s, rng), std::invalid_argument);
    EXPECT_THROW(heuristic_decisions(Heuristic::peak, cm, o, rng), std::invalid_argument);
}

TEST(Naive, EachNodeSeesOnlyItsBlock) {
    IfcProblem prob(3, 1, 1, IfcObjective::sum_rate);
    Rng init(40);
    auto net = make_centralized_policy(prob, centralized_architecture(prob), init);
    NaivePolicy naive(net, prob.observation_dims());
    Rng rng(41);
    Matrix s = prob.sample(30, rng);
    Matrix s2 = s;
    s2.middleCols(3, 6) = prob.sample(30, rng).middleCols(3, 6);
    Tape t;
    Matrix x = naive.forward(t, s, Mode::train).value();
    Matrix x2 = naive.forward(t, s2, Mode::train).value();
    EXPECT_TRUE(x.col(0) == x2.col(0));
    Matrix masked = Matrix::Zero(30, 9);
    masked.middleCols(3, 3) = s.middleCols(3, 3);
    Matrix want = net.forward(t, masked, Mode::eval).value();
    EXPECT_TRUE(x.col(1) == want.col(1));
}

TEST(Supervised, FitsLabelsBetterThanInit) {
    IfcProblem prob(2, 1, 1, IfcObjective::sum_rate);
    SupervisedConfig c;
    c.train_size = 2000;
    c.batch_size = 200;
    c.iterations = 400;
    c.seed = 42;
    auto fit = train_supervised(prob, c);
    Rng init(43);
    auto fresh = make_centralized_policy(prob, centralized_architecture(prob), init);
    Rng rng(44);
    Matrix s = prob.sample(2000, rng);
    Matrix y = wmmse_decisions(prob, s);
    Tape t;
    const double e_fit = (fit.forward(t, s, Mode::train).value() - y).squaredNorm();
    const double e_init = (fresh.forward(t, s, Mode::train).value() - y).squaredNorm();
    EXPECT_LT(e_fit, 0.7 * e_init);
}

}  // namespace
