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

Matrix repeat(const Matrix& row, Index n) { return row.replicate(n, 1); }

TEST(Forward, PlusOneIsDeterministic) {
    StochasticBinarizer b(1);
    auto out = b.sample(repeat(Matrix::Constant(1, 1, 1.0), 10000));
    EXPECT_EQ(out.v.minCoeff(), 1.0);
}

TEST(Forward, ZeroIsFairCoin) {
    StochasticBinarizer b(2);
    auto out = b.sample(Matrix::Zero(100000, 1));
    const double freq = (out.v.array() > 0).cast<double>().mean();
    EXPECT_GE(freq, 0.495);
    EXPECT_LE(freq, 0.505);
}

TEST(Forward, MeanMatchesVhat) {
    StochasticBinarizer b(3);
    auto out = b.sample(Matrix::Constant(1000000, 1, 0.4));
    const double m = out.v.mean();
    EXPECT_GE(m, 0.396);
    EXPECT_LE(m, 0.404);
}

TEST(Forward, OutputIsBipolarAndDecomposes) {
    Rng rng(4);
    StochasticBinarizer b(5);
    Matrix vh = Matrix::Random(2000, 8);
    auto out = b.sample(vh);
    for (Index k = 0; k < out.v.size(); ++k) {
        const double v = out.v.data()[k];
        ASSERT_TRUE(v == 1.0 || v == -1.0);
        ASSERT_NEAR(out.v_hat.data()[k] + out.q.data()[k], v, 1e-15);
        ASSERT_LE(std::abs(out.v_hat.data()[k]), 1.0);
    }
}

TEST(Forward, RangeCheck) {
    StochasticBinarizer b(6);
    EXPECT_THROW(b.sample(Matrix::Constant(1, 1, 1.001)), std::domain_error);
    EXPECT_THROW(b.sample(Matrix::Constant(1, 1, -1.0 - 1e-9)), std::domain_error);
    auto out = b.sample(Matrix::Constant(1, 1, 1.0 + 1e-13));
    EXPECT_EQ(out.v_hat(0, 0), 1.0);
    EXPECT_EQ(out.v(0, 0), 1.0);
}

TEST(Forward, NoiseMeanWithinThreeSigma) {
    Rng rng(7);
    StochasticBinarizer b(8);
    for (int rep = 0; rep < 5; ++rep) {
        Matrix vh = Matrix::Random(1, 6);
        const Index n = 40000;
        auto out = b.sample(repeat(vh, n));
        RowVector qm = out.q.colwise().mean();
        for (Index l = 0; l < 6; ++l) EXPECT_LE(std::abs(qm(l)), 4.0 / std::sqrt(double(n)));
    }
}

TEST(Backward, PassThrough) {
    Tensor vh(Matrix{{0.2, -0.5}}, true);
    StochasticBinarizer b(9);
    Tape t;
    Var v = b.forward(t.watch(vh), true);
    t.backward(sum(mul(v, t.constant(Matrix{{1, -2}}))));
    EXPECT_EQ(vh.grad(), (Matrix{{1, -2}}));
    EXPECT_EQ(binarize_backward(Matrix{{1, -2}}), (Matrix{{1, -2}}));
}

// The chain through the binarizer must differentiate exactly like the chain
// through v_hat + const(q), i.e. the identity on v_hat.
TEST(Backward, ChainEqualsIdentityReplacement) {
    Rng rng(10);
    Matrix a = Matrix::Random(32, 3);
    Rng init(11);
    Mlp quant(3, {LayerSpec::hidden(5, false), LayerSpec::output(4, Activation::tanh)}, init);
    Mlp opt(4, {LayerSpec::hidden(6, false), LayerSpec::output(1, Activation::sigmoid)}, init);

    auto grads = [&](bool identity) {
        Mlp q = quant, o = opt;
        StochasticBinarizer b(12);
        Tape t;
        Var vh = q.forward(t, t.constant(a), Mode::train);
        Var v = identity ? add(vh, t.constant(b.sample(vh.value()).q)) : b.forward(vh, true);
        Var y = o.forward(t, v, Mode::train);
        t.backward(mean(mul(y, y)));
        std::vector<Matrix> out;
        for (Tensor* p : q.parameters()) out.push_back(p->grad());
        for (Tensor* p : o.parameters()) out.push_back(p->grad());
        return out;
    };
    auto g1 = grads(false), g2 = grads(true);
    ASSERT_EQ(g1.size(), g2.size());
    for (std::size_t k = 0; k < g1.size(); ++k) EXPECT_LT((g1[k] - g2[k]).cwiseAbs().maxCoeff(), 1e-15) << k;
}

// E[f(v)] for a multilinear f equals f(v_hat), so central differences of the
// Monte-Carlo mean (common random numbers) estimate its gradient.
TEST(Backward, MatchesMonteCarloGradient) {
    auto f = [](const Matrix& v) -> Matrix {
        return v.col(0).cwiseProduct(v.col(1)) + 0.5 * v.col(1).cwiseProduct(v.col(2)) - v.col(0) + v.col(2);
    };
    const Matrix vh{{0.5, -0.6, 0.4}};
    const Index n = 1000000;
    const double h = 0.2;

    Tensor leaf(vh, true);
    StochasticBinarizer b(13);
    Tape t;
    Var v = b.forward(add(t.constant(Matrix::Zero(n, 3)), t.watch(leaf)), true);
    Var c0 = slice_cols(v, 0, 1), c1 = slice_cols(v, 1, 1), c2 = slice_cols(v, 2, 1);
    Var y = add(sub(add(mul(c0, c1), scale(mul(c1, c2), 0.5)), c0), c2);
    t.backward(mean(y));

    for (Index l = 0; l < 3; ++l) {
        Matrix up = vh, dn = vh;
        up(0, l) += h;
        dn(0, l) -= h;
        StochasticBinarizer bu(14), bd(14);
        const double fd = (f(bu.sample(repeat(up, n)).v).mean() - f(bd.sample(repeat(dn, n)).v).mean()) / (2 * h);
        const double exact = f(up)(0, 0) - f(dn)(0, 0);
        EXPECT_NEAR(leaf.grad()(0, l), fd, 0.02 * std::abs(fd)) << l;
        EXPECT_NEAR(exact / (2 * h), leaf.grad()(0, l), 0.02 * std::abs(exact / (2 * h))) << l;
    }
}

TEST(Eval, SignWithTieToPlus) {
    EXPECT_EQ(binarize_eval(Matrix{{0.3, -0.7}}), (Matrix{{1, -1}}));
    EXPECT_EQ(binarize_eval(Matrix{{0.0}}), (Matrix{{1}}));
}

TEST(Eval, EqualsModeOfStochasticForward) {
    Matrix vh{{0.05, -0.3, 0.8, -0.02}};
    StochasticBinarizer b(15);
    Matrix m = b.sample(repeat(vh, 20000)).v.colwise().mean();
    Matrix mode = m.unaryExpr([](double e) { return e >= 0 ? 1.0 : -1.0; });
    EXPECT_EQ(binarize_eval(vh), mode);
}

TEST(Eval, DeterministicForwardUsesSign) {
    Tensor vh(Matrix{{0.2, -0.5, 0.0}}, true);
    StochasticBinarizer b(16);
    Tape t;
    EXPECT_EQ(b.forward(t.watch(vh), false).value(), (Matrix{{1, -1, 1}}));
}

}  // namespace
