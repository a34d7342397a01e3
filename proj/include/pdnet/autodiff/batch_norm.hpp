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

#include "pdnet/autodiff/ops.hpp"

namespace pdnet {

/// Train mode normalizes with batch statistics; the eval modes use the
/// running estimates. eval_stochastic additionally keeps stochastic layers
/// (the binarizer) sampling. calibrate normalizes with batch statistics and
/// overwrites the running estimates with them, with stochastic layers
/// deterministic as in eval.
enum class Mode { train, eval, eval_stochastic, calibrate };

inline bool uses_batch_stats(Mode m) { return m == Mode::train || m == Mode::calibrate; }

/// Whether stochastic layers sample (otherwise they act deterministically).
inline bool samples_noise(Mode m) { return m == Mode::train || m == Mode::eval_stochastic; }

struct BatchNormStats {
    RowVector running_mean;
    RowVector running_var;
    double momentum = 0.99;
    double eps = 1e-5;

    BatchNormStats() = default;
    explicit BatchNormStats(Index dim)
        : running_mean(RowVector::Zero(dim)), running_var(RowVector::Ones(dim)) {}
};

/// Batch normalization over the rows of x (S x d), followed by the per-feature
/// affine map gamma * xhat + beta.
///
/// In train mode the running statistics move toward the batch statistics by an
/// exponential moving average with weight `momentum` on the old value. The
/// batch variance is the biased (1/S) estimate in both places, so after many
/// identical batches eval and train outputs agree.
inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Mode mode,
                      BatchNormStats& stats) {
    const Index S = x.rows(), d = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d)
        throw dimension_error("batch_norm: gamma/beta must be 1x" + std::to_string(d) + ", got " +
                              shape_string(gamma.value()) + " and " + shape_string(beta.value()));
    if (stats.running_mean.size() != d)
        throw dimension_error("batch_norm: running statistics have wrong width");
    Tape& t = *x.tape();
    const Matrix& xv = x.value();
    const int ix = x.id(), ig = gamma.id(), ib = beta.id();

    if (uses_batch_stats(mode)) {
        if (S < 2) throw dimension_error("batch_norm: train mode needs at least 2 samples");
        RowVector mu = xv.colwise().mean();
        Matrix centered = xv.rowwise() - mu;
        RowVector var = centered.array().square().colwise().mean();
        RowVector inv_std = (var.array() + stats.eps).rsqrt();
        Matrix xhat = centered.array().rowwise() * inv_std.array();
        Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                     beta.value().row(0).array();
        detail::check_finite(out, "batch_norm");
        if (mode == Mode::calibrate) {
            stats.running_mean = mu;
            stats.running_var = var;
        } else {
            stats.running_mean = stats.momentum * stats.running_mean + (1.0 - stats.momentum) * mu;
            stats.running_var = stats.momentum * stats.running_var + (1.0 - stats.momentum) * var;
        }
        return t.record("batch_norm", std::move(out), {ix, ig, ib},
                        [ix, ig, ib, xhat = std::move(xhat), inv_std](Tape& tp, int self) {
                            const Matrix& g = tp.adjoint(self);
                            if (tp.needs_grad(ig))
                                tp.adjoint(ig) += g.cwiseProduct(xhat).colwise().sum();
                            if (tp.needs_grad(ib)) tp.adjoint(ib) += g.colwise().sum();
                            if (tp.needs_grad(ix)) {
                                const double n = double(g.rows());
                                Matrix dxhat = g.array().rowwise() * tp.value(ig).row(0).array();
                                RowVector s1 = dxhat.colwise().sum();
                                RowVector s2 = dxhat.cwiseProduct(xhat).colwise().sum();
                                Matrix dx = (n * dxhat.array()).matrix();
                                dx.rowwise() -= s1;
                                dx -= (xhat.array().rowwise() * s2.array()).matrix();
                                dx = (dx.array().rowwise() * (inv_std.array() / n)).matrix();
                                tp.adjoint(ix) += dx;
                            }
                        });
    }

    RowVector inv_std = (stats.running_var.array() + stats.eps).rsqrt();
    Matrix xhat = (xv.rowwise() - stats.running_mean).array().rowwise() * inv_std.array();
    Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                 beta.value().row(0).array();
    detail::check_finite(out, "batch_norm");
    return t.record("batch_norm", std::move(out), {ix, ig, ib},
                    [ix, ig, ib, xhat = std::move(xhat), inv_std](Tape& tp, int self) {
                        const Matrix& g = tp.adjoint(self);
                        if (tp.needs_grad(ig)) tp.adjoint(ig) += g.cwiseProduct(xhat).colwise().sum();
                        if (tp.needs_grad(ib)) tp.adjoint(ib) += g.colwise().sum();
                        if (tp.needs_grad(ix))
                            tp.adjoint(ix) += (g.array().rowwise() *
                                               (tp.value(ig).row(0).array() * inv_std.array()))
                                                  .matrix();
                    });
}

}  // namespace pdnet
