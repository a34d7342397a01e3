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

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pdnet/autodiff.hpp"
#include "pdnet/mlp.hpp"
#include "pdnet/problems.hpp"

namespace pdnet {

/// Central differences against the tape. Each case reduces the function
/// output to a scalar with a fixed random projection and compares the
/// gradient with respect to every input as one flattened vector:
///   err = |g_tape - g_fd| / max(|g_tape|, |g_fd|, floor).
struct GradcheckOptions {
    double step = 1e-6;
    double tolerance = 1e-5;
    double floor = 1e-6;
};

struct GradcheckCase {
    std::string name;
    double rel_error = 0;
    bool passed = false;
};

struct GradcheckReport {
    std::vector<GradcheckCase> cases;

    bool passed() const {
        return !cases.empty() && std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.passed; });
    }
    double worst() const {
        double w = 0;
        for (const auto& c : cases) w = std::max(w, c.rel_error);
        return w;
    }
};

using GradFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares tape and finite-difference gradients of f at `inputs`.
inline GradcheckCase gradcheck(const std::string& name, std::vector<Matrix> inputs, const GradFn& f, Rng& rng,
                               const GradcheckOptions& opt = {}) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix proj;
    auto scalar = [&](Tape& tape, std::span<const Var> args) {
        Var out = f(tape, args);
        if (proj.size() == 0) proj = Matrix(out.rows(), out.cols()).unaryExpr([&](double) { return normal(rng); });
        return sum(mul(out, tape.constant(proj)));
    };

    std::vector<Tensor> leaves;
    for (auto& m : inputs) leaves.emplace_back(m, true);
    Eigen::VectorXd analytic;
    {
        Tape tape;
        std::vector<Var> args;
        for (auto& t : leaves) args.push_back(tape.watch(t));
        tape.backward(scalar(tape, args));
        Index n = 0;
        for (auto& t : leaves) n += t.size();
        analytic.resize(n);
        Index k = 0;
        for (auto& t : leaves) {
            analytic.segment(k, t.size()) = Eigen::Map<const Eigen::VectorXd>(t.grad().data(), t.size());
            k += t.size();
        }
    }

    auto value_at = [&]() {
        Tape tape;
        std::vector<Var> args;
        for (auto& m : inputs) args.push_back(tape.constant(m));
        return scalar(tape, args).scalar();
    };
    Eigen::VectorXd numeric(analytic.size());
    Index k = 0;
    for (auto& m : inputs) {
        for (Index e = 0; e < m.size(); ++e) {
            const double orig = m.data()[e];
            const double h = opt.step * std::max(1.0, std::abs(orig));
            m.data()[e] = orig + h;
            const double up = value_at();
            m.data()[e] = orig - h;
            const double down = value_at();
            m.data()[e] = orig;
            numeric(k++) = (up - down) / (2 * h);
        }
    }
    GradcheckCase c;
    c.name = name;
    const double scale = std::max({analytic.norm(), numeric.norm(), opt.floor});
    c.rel_error = (analytic - numeric).norm() / scale;
    c.passed = c.rel_error <= opt.tolerance;
    return c;
}

namespace detail {

inline Matrix gaussian(Index r, Index c, Rng& rng, double sd = 1.0) {
    std::normal_distribution<double> normal(0.0, sd);
    return Matrix(r, c).unaryExpr([&](double) { return normal(rng); });
}

/// Gaussian entries kept at least `gap` away from every point in `kinks`.
inline Matrix away_from(Index r, Index c, Rng& rng, std::vector<double> kinks, double gap = 1e-2) {
    Matrix m = gaussian(r, c, rng);
    for (Index e = 0; e < m.size(); ++e)
        while (std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(m.data()[e] - k) < gap; }))
            m.data()[e] = gaussian(1, 1, rng)(0, 0);
    return m;
}

/// Rows whose entries are pairwise separated, so min has a unique argmin
/// under small perturbations.
inline Matrix separated(Index r, Index c, Rng& rng, double gap = 1e-2) {
    Matrix m = gaussian(r, c, rng);
    for (Index i = 0; i < r; ++i) {
        bool ok = false;
        while (!ok) {
            ok = true;
            for (Index a = 0; a < c && ok; ++a)
                for (Index b = a + 1; b < c && ok; ++b)
                    if (std::abs(m(i, a) - m(i, b)) < gap) ok = false;
            if (!ok) m.row(i) = gaussian(1, c, rng);
        }
    }
    return m;
}

inline Matrix positive(Index r, Index c, Rng& rng, double lo = 0.2) {
    std::uniform_real_distribution<double> unif(lo, 2.0);
    return Matrix(r, c).unaryExpr([&](double) { return unif(rng); });
}

}  // namespace detail

/// Every primitive, each at several random shapes.
inline GradcheckReport gradcheck_primitives(std::uint64_t seed, int repeats = 5, const GradcheckOptions& opt = {}) {
    using detail::away_from;
    using detail::gaussian;
    using detail::positive;
    using detail::separated;
    GradcheckReport rep;
    Rng rng(seed);
    std::uniform_int_distribution<Index> dim(1, 5);
    auto add = [&](const std::string& name, std::vector<Matrix> in, GradFn f) {
        rep.cases.push_back(gradcheck(name, std::move(in), f, rng, opt));
    };
    for (int rep_i = 0; rep_i < repeats; ++rep_i) {
        const Index r = dim(rng) + 1, c = dim(rng), k = dim(rng);
        add("matmul", {gaussian(r, k, rng), gaussian(k, c, rng)}, [](Tape&, auto a) { return matmul(a[0], a[1]); });
        add("add", {gaussian(r, c, rng), gaussian(r, c, rng)}, [](Tape&, auto a) { return pdnet::add(a[0], a[1]); });
        add("add_row_broadcast", {gaussian(r, c, rng), gaussian(1, c, rng)},
            [](Tape&, auto a) { return pdnet::add(a[0], a[1]); });
        add("sub_col_broadcast", {gaussian(r, c, rng), gaussian(r, 1, rng)}, [](Tape&, auto a) { return sub(a[0], a[1]); });
        add("mul", {gaussian(r, c, rng), gaussian(r, c, rng)}, [](Tape&, auto a) { return mul(a[0], a[1]); });
        add("mul_scalar_broadcast", {gaussian(r, c, rng), gaussian(1, 1, rng)},
            [](Tape&, auto a) { return mul(a[0], a[1]); });
        add("div", {gaussian(r, c, rng), positive(r, c, rng)}, [](Tape&, auto a) { return div(a[0], a[1]); });
        add("div_row_broadcast", {gaussian(r, c, rng), positive(1, c, rng)},
            [](Tape&, auto a) { return div(a[0], a[1]); });
        add("scale", {gaussian(r, c, rng)}, [](Tape&, auto a) { return scale(a[0], -2.5); });
        add("shift", {gaussian(r, c, rng)}, [](Tape&, auto a) { return shift(a[0], 0.75); });
        add("neg", {gaussian(r, c, rng)}, [](Tape&, auto a) { return neg(a[0]); });
        add("log1p", {positive(r, c, rng, -0.5)}, [](Tape&, auto a) { return log1p(a[0]); });
        add("exp", {gaussian(r, c, rng)}, [](Tape&, auto a) { return pdnet::exp(a[0]); });
        add("relu", {away_from(r, c, rng, {0.0})}, [](Tape&, auto a) { return relu(a[0]); });
        add("max0", {away_from(r, c, rng, {0.0})}, [](Tape&, auto a) { return max0(a[0]); });
        add("tanh", {gaussian(r, c, rng)}, [](Tape&, auto a) { return pdnet::tanh(a[0]); });
        add("sigmoid", {gaussian(r, c, rng, 3.0)}, [](Tape&, auto a) { return sigmoid(a[0]); });
        const RowVector lo = RowVector::Constant(c, -0.5), hi = RowVector::Constant(c, 0.5);
        add("clamp", {away_from(r, c, rng, {-0.5, 0.5})}, [lo, hi](Tape&, auto a) { return clamp(a[0], lo, hi); });
        for (int axis : {-1, 0, 1}) {
            const std::string ax = std::to_string(axis);
            add("sum_axis" + ax, {gaussian(r, c, rng)}, [axis](Tape&, auto a) { return sum(a[0], axis); });
            add("mean_axis" + ax, {gaussian(r, c, rng)}, [axis](Tape&, auto a) { return mean(a[0], axis); });
        }
        add("min_axis1", {separated(r, c, rng)}, [](Tape&, auto a) { return min(a[0], 1); });
        add("min_axis0", {separated(c, r, rng).transpose()}, [](Tape&, auto a) { return min(a[0], 0); });
        add("min_all", {separated(1, r * c, rng).reshaped<Eigen::RowMajor>(r, c)},
            [](Tape&, auto a) { return min(a[0], -1); });
        const Index cc = c + 2;
        add("slice_cols", {gaussian(r, cc, rng)}, [](Tape&, auto a) { return slice_cols(a[0], 1, 2); });
        add("concat_cols", {gaussian(r, c, rng), gaussian(r, k, rng)},
            [](Tape&, auto a) { return concat_cols({a[0], a[1]}); });
        add("batch_norm_train", {gaussian(r + 2, c, rng), gaussian(1, c, rng), gaussian(1, c, rng)},
            [c](Tape&, auto a) {
                BatchNormStats stats(c);
                return batch_norm(a[0], a[1], a[2], Mode::train, stats);
            });
        BatchNormStats eval_stats(c);
        eval_stats.running_mean = gaussian(1, c, rng);
        eval_stats.running_var = positive(1, c, rng);
        add("batch_norm_eval", {gaussian(r, c, rng), gaussian(1, c, rng), gaussian(1, c, rng)},
            [eval_stats](Tape&, auto a) {
                BatchNormStats stats = eval_stats;
                return batch_norm(a[0], a[1], a[2], Mode::eval, stats);
            });
    }
    return rep;
}

/// Problem utilities and constraints with respect to the decisions.
inline GradcheckReport gradcheck_problems(std::uint64_t seed, int repeats = 3, const GradcheckOptions& opt = {}) {
    GradcheckReport rep;
    Rng rng(seed);
    for (int r = 0; r < repeats; ++r) {
        for (std::size_t n : {2u, 3u}) {
            CmacProblem cmac(n, 2.0, 1.0);
            const Matrix a = cmac.sample(6, rng);
            rep.cases.push_back(gradcheck("cmac_utility", {detail::positive(6, Index(n), rng)},
                                          [&](Tape& t, auto x) { return cmac.utility(t, a, x[0]); }, rng, opt));
            rep.cases.push_back(gradcheck("cmac_constraints", {detail::positive(6, Index(n), rng)},
                                          [&](Tape& t, auto x) { return cmac.constraints(t, a, x[0]); }, rng, opt));
            for (auto obj : {IfcObjective::sum_rate, IfcObjective::min_rate}) {
                IfcProblem ifc(n, 1.0, 2.0, obj);
                const Matrix b = ifc.sample(6, rng);
                // Resample decisions until per-row rates are separated, so the
                // min-rate argmin is stable under the difference step.
                Matrix x;
                while (true) {
                    x = detail::positive(6, Index(n), rng);
                    Tape t;
                    Matrix rates = ifc.rates(t, b, t.constant(x)).value();
                    bool ok = true;
                    for (Index i = 0; i < rates.rows(); ++i)
                        for (Index p = 0; p < rates.cols(); ++p)
                            for (Index q = p + 1; q < rates.cols(); ++q)
                                if (std::abs(rates(i, p) - rates(i, q)) < 1e-3) ok = false;
                    if (ok) break;
                }
                rep.cases.push_back(gradcheck(obj == IfcObjective::sum_rate ? "ifc_sum_rate" : "ifc_min_rate", {x},
                                              [&](Tape& t, auto v) { return ifc.utility(t, b, v[0]); }, rng, opt));
            }
        }
    }
    return rep;
}

/// A 4-hidden-layer network with batch norm in training mode: gradients with
/// respect to every parameter and the input.
inline GradcheckReport gradcheck_network(std::uint64_t seed, int repeats = 3, const GradcheckOptions& opt = {}) {
    GradcheckReport rep;
    Rng rng(seed);
    for (int r = 0; r < repeats; ++r) {
        const Index in = 4, width = 8, batch = 6;
        std::vector<LayerSpec> specs;
        for (int l = 0; l < 4; ++l) specs.push_back(LayerSpec::hidden(width, true));
        specs.push_back(r % 2 == 0 ? LayerSpec::scaled_sigmoid(2, 3.0) : LayerSpec::output(2, Activation::linear));
        Mlp proto(in, specs, rng);
        std::vector<Matrix> inputs{detail::gaussian(batch, in, rng)};
        for (Tensor* p : proto.parameters()) inputs.push_back(p->value());
        auto f = [proto](Tape&, std::span<const Var> a) mutable {
            // Rebuild the layer stack from the watched parameters.
            Var u = a[0];
            std::size_t k = 1;
            for (auto& L : proto.layers()) {
                Var z = add(matmul(u, a[k]), a[k + 1]);
                k += 2;
                if (L.spec.batch_norm) {
                    BatchNormStats stats(L.spec.out_dim);
                    z = batch_norm(z, a[k], a[k + 1], Mode::train, stats);
                    k += 2;
                }
                u = activate(z, L.spec);
            }
            return u;
        };
        // Pre-activations near the ReLU kink would make the difference quotient
        // straddle it; redraw the input batch until none are.
        for (int attempt = 0; attempt < 50; ++attempt) {
            Tape tape;
            Var u = tape.constant(inputs[0]);
            bool near_kink = false;
            std::size_t k = 1;
            for (auto& L : proto.layers()) {
                Var z = add(matmul(u, tape.constant(inputs[k])), tape.constant(inputs[k + 1]));
                k += 2;
                if (L.spec.batch_norm) {
                    BatchNormStats stats(L.spec.out_dim);
                    z = batch_norm(z, tape.constant(inputs[k]), tape.constant(inputs[k + 1]), Mode::train, stats);
                    k += 2;
                }
                if (L.spec.activation == Activation::relu && (z.value().array().abs() < 1e-3).any()) near_kink = true;
                u = activate(z, L.spec);
            }
            if (!near_kink) break;
            inputs[0] = detail::gaussian(batch, in, rng);
        }
        rep.cases.push_back(gradcheck("network_4x" + std::to_string(width), inputs, f, rng, opt));
    }
    return rep;
}

/// All suites; at least 100 cases with the defaults.
inline GradcheckReport gradcheck_all(std::uint64_t seed = 1, const GradcheckOptions& opt = {}) {
    GradcheckReport all;
    for (auto part : {gradcheck_primitives(derive_seed(seed, 1), 5, opt), gradcheck_problems(derive_seed(seed, 2), 3, opt),
                      gradcheck_network(derive_seed(seed, 3), 3, opt)})
        all.cases.insert(all.cases.end(), part.cases.begin(), part.cases.end());
    return all;
}

}  // namespace pdnet
