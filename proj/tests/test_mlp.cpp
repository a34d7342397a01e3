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

#include <sstream>

#include "pdnet/pdnet.hpp"

using namespace pdnet;

namespace {

void zero_weights(Mlp& net) {
    for (auto& L : net.layers()) L.weight.value().setZero();
}

TEST(Forward, ZeroWeightsGiveBias) {
    Rng rng(1);
    Mlp net(4, {LayerSpec::hidden(5, false), LayerSpec::output(3, Activation::relu)}, rng);
    zero_weights(net);
    Matrix y = net.predict(Matrix::Random(7, 4));
    for (Index k = 0; k < y.size(); ++k) EXPECT_DOUBLE_EQ(y.data()[k], 0.01);
}

TEST(Forward, NonnegProjectionOutputs) {
    Rng rng(2);
    Mlp net(3, {LayerSpec::hidden(8), LayerSpec::projection(FeasibleSet::nonneg(2))}, rng);
    Matrix x = 10.0 * Matrix::Random(2000, 3);
    Tape t;
    Matrix y = net.forward(t, t.constant(x), Mode::train).value();
    EXPECT_GE(y.minCoeff(), 0.0);
    EXPECT_GT(y.maxCoeff(), 0.0);
}

TEST(Forward, ScaledSigmoidInsideOpenBox) {
    Rng rng(3);
    Mlp net(2, {LayerSpec::hidden(8, false), LayerSpec::scaled_sigmoid(3, 2.5)}, rng);
    Matrix y = net.predict(Matrix::Random(1000, 2));
    EXPECT_GT(y.minCoeff(), 0.0);
    EXPECT_LT(y.maxCoeff(), 2.5);
}

TEST(Forward, DimensionMismatchThrows) {
    Rng rng(4);
    Mlp net(3, {LayerSpec::output(1, Activation::linear)}, rng);
    EXPECT_THROW(net.predict(Matrix::Zero(2, 4)), dimension_error);
}

TEST(Project, Examples) {
    auto nn = FeasibleSet::nonneg(1);
    auto box = FeasibleSet::box(1, 0, 5);
    EXPECT_EQ(project(nn, std::vector<double>{-2})[0], 0.0);
    EXPECT_EQ(project(box, std::vector<double>{7})[0], 5.0);
    std::vector<double> u{0.3, 4.0};
    EXPECT_EQ(project(FeasibleSet::box(2, 0, 5), u), u);
}

TEST(Project, BoxValidatesBounds) { EXPECT_THROW(FeasibleSet::box(1, 2, 1), std::invalid_argument); }

TEST(MaskNodeOutput, Examples) {
    std::vector<double> x{1.5, 2.5, 3.5};
    std::vector<Index> d111{1, 1, 1}, d21{2, 1};
    EXPECT_EQ(mask_node_output(x, 1, d111), std::vector<double>{2.5});
    EXPECT_EQ(mask_node_output(x, 0, d21), (std::vector<double>{1.5, 2.5}));
    std::vector<double> joined;
    for (std::size_t i = 0; i < 2; ++i) {
        auto s = mask_node_output(x, i, d21);
        joined.insert(joined.end(), s.begin(), s.end());
    }
    EXPECT_EQ(joined, x);
    EXPECT_THROW(mask_node_output(x, 3, d111), std::out_of_range);
    EXPECT_THROW(mask_node_output(x, 0, std::vector<Index>{1, 1}), dimension_error);
}

TEST(Feasibility, ExactOnManyRandomInputs) {
    Rng rng(5);
    for (auto spec : {LayerSpec::projection(FeasibleSet::nonneg(3)), LayerSpec::scaled_sigmoid(3, 4.0),
                      LayerSpec::projection(FeasibleSet::box(3, 0, 4.0))}) {
        Mlp net(2, {LayerSpec::hidden(10), spec}, rng);
        Matrix x = 50.0 * Matrix::Random(100000, 2);
        Tape t;
        Matrix y = net.forward(t, t.constant(x), Mode::train).value();
        const double hi = spec.activation == Activation::projection && spec.set->is_nonneg() ? 1e300 : 4.0;
        EXPECT_GE(y.minCoeff(), 0.0);
        EXPECT_LE(y.maxCoeff(), hi);
    }
}

TEST(ScaledSigmoid, GradientAliveForModeratePreactivations) {
    for (double z : {-9.9, -3.0, 0.0, 2.0, 9.9}) {
        Tensor x(Matrix::Constant(1, 1, z), true);
        Tape t;
        t.backward(sum(activate(t.watch(x), LayerSpec::scaled_sigmoid(1, 10.0))));
        EXPECT_GT(std::abs(x.grad()(0, 0)), 0.0) << z;
    }
}

TEST(Architecture, CentralizedSizes) {
    Rng rng(6);
    for (auto [id, n, layers, width] : {std::tuple{ProblemId::p3, 2, 4, 20}, std::tuple{ProblemId::p4, 3, 4, 30},
                                        std::tuple{ProblemId::p5, 3, 5, 60}}) {
        auto p = make_problem(id, std::size_t(n), SweepPoint{});
        auto arch = centralized_architecture(*p);
        EXPECT_EQ(arch.hidden_layers, layers);
        EXPECT_EQ(arch.width, width);
        auto pol = make_centralized_policy(*p, arch, rng);
        const auto& L = pol.net().layers();
        ASSERT_EQ(int(L.size()), layers + 1);
        for (int r = 0; r < layers; ++r) {
            EXPECT_EQ(L[r].spec.out_dim, width);
            EXPECT_TRUE(L[r].spec.batch_norm);
            EXPECT_EQ(L[r].spec.activation, Activation::relu);
        }
        EXPECT_FALSE(L.back().spec.batch_norm);
        EXPECT_EQ(L.back().spec.out_dim, n);
        EXPECT_EQ(pol.net().input_dim(), p->observation_size());
    }
}

TEST(Architecture, DistributedSizes) {
    auto p3 = make_problem(ProblemId::p3, 2, SweepPoint{});
    auto p5 = make_problem(ProblemId::p5, 3, SweepPoint{});
    auto a = distributed_architecture(*p3);
    EXPECT_EQ(a.optimizer_layers, 3);
    EXPECT_EQ(a.optimizer_width, 20);
    EXPECT_EQ(a.quantizer_layers, 1);
    EXPECT_EQ(a.quantizer_width, 20);
    auto b = distributed_architecture(*p5);
    EXPECT_EQ(b.optimizer_layers, 4);
    EXPECT_EQ(b.optimizer_width, 60);
    EXPECT_EQ(b.quantizer_layers, 1);
    EXPECT_EQ(b.quantizer_width, 60);
}

TEST(Mlp, ParameterCountFormula) {
    Rng rng(7);
    Mlp net(4, {LayerSpec::hidden(6), LayerSpec::hidden(5, false), LayerSpec::output(2, Activation::linear)}, rng);
    const Index expected = (4 * 6 + 6) + 2 * 6 + (6 * 5 + 5) + (5 * 2 + 2);
    EXPECT_EQ(net.parameter_count(), expected);
    Index total = 0;
    for (Tensor* t : net.parameters()) total += t->size();
    EXPECT_EQ(total, expected);
}

TEST(Mlp, LayerSpecValidation) {
    Rng rng(8);
    EXPECT_THROW(Mlp(2, {LayerSpec::output(0, Activation::linear)}, rng), std::invalid_argument);
    EXPECT_THROW(Mlp(2, {LayerSpec::scaled_sigmoid(1, 0.0)}, rng), std::invalid_argument);
    EXPECT_THROW(Mlp(2, {}, rng), std::invalid_argument);
}

TEST(Mlp, SaveLoadRoundTrip) {
    Rng rng(9);
    Mlp net(3, {LayerSpec::hidden(4), LayerSpec::scaled_sigmoid(2, 3.0)}, rng);
    Tape t;
    net.forward(t, t.constant(Matrix::Random(16, 3)), Mode::train);
    std::stringstream ss;
    net.save(ss);
    Mlp back = Mlp::load(ss);
    Matrix x = Matrix::Random(5, 3);
    EXPECT_TRUE(net.predict(x) == back.predict(x));
    EXPECT_EQ(back.parameter_count(), net.parameter_count());
}

TEST(Mlp, LoadRejectsTruncatedFile) {
    Rng rng(10);
    Mlp net(3, {LayerSpec::hidden(4), LayerSpec::output(1, Activation::relu)}, rng);
    std::stringstream ss;
    net.save(ss);
    std::string s = ss.str();
    std::stringstream cut(s.substr(0, s.size() / 2));
    EXPECT_ANY_THROW(Mlp::load(cut));
}

}  // namespace
