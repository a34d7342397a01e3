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
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pdnet/autodiff.hpp"
#include "pdnet/problems.hpp"
#include "pdnet/trainer.hpp"

namespace pdnet {

// ---------------------------------------------------------------------------
// Cognitive MAC: long-term optimum by dual decomposition
// ---------------------------------------------------------------------------

/// Power handed to a user whose price is zero; the inner problem is
/// unbounded there.
inline constexpr double kUnpricedPower = 1e6;

/// argmax_{p >= 0} log(1 + sum h_i p_i) - sum c_i p_i.
///
/// Only the user with the smallest price per unit gain c_i / h_i can be
/// active, at p = (1/c - 1/h)_+. Ties go to the lowest index.
inline std::vector<double> cmac_inner_solution(std::span<const double> h, std::span<const double> c) {
    if (h.size() != c.size()) throw dimension_error("cmac_inner_solution: h and c differ in length");
    std::vector<double> p(h.size(), 0.0);
    std::size_t best = 0;
    double best_ratio = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (!(h[i] > 0) || c[i] < 0) throw std::invalid_argument("cmac_inner_solution: need h > 0, c >= 0");
        const double r = c[i] / h[i];
        if (r < best_ratio) {
            best_ratio = r;
            best = i;
        }
    }
    if (h.empty()) return p;
    if (c[best] <= 0) p[best] = kUnpricedPower;
    else p[best] = std::max(0.0, 1.0 / c[best] - 1.0 / h[best]);
    return p;
}

struct CmacOracleOptions {
    int max_iterations = 10000;
    double tol = 1e-3;       // relative constraint violation / slackness
    double step = 1.0;       // step at t = 1; decays as 1/sqrt(t)
    double damping = 0.5;    // weight of the previous direction
    double initial_dual = 1.0;
};

struct OracleResult {
    Metrics metrics;
    std::vector<double> lambda;   // power multipliers
    double mu = 0;                // interference multiplier
    int iterations = 0;
    bool converged = false;
    double max_violation = 0;     // max_k (E g_k - G_k) / G_k
    double duality_gap = 0;       // sum_k y_k (G_k - E g_k)
    std::string diagnostics;
};

namespace detail {
inline Matrix cmac_decisions(const Matrix& obs, std::size_t n, std::span<const double> lambda, double mu) {
    Matrix x(obs.rows(), Index(n));
    std::vector<double> h(n), c(n);
    for (Index r = 0; r < obs.rows(); ++r) {
        for (std::size_t i = 0; i < n; ++i) {
            h[i] = obs(r, Index(2 * i));
            c[i] = lambda[i] + mu * obs(r, Index(2 * i + 1));
        }
        auto p = cmac_inner_solution(h, c);
        for (std::size_t i = 0; i < n; ++i) x(r, Index(i)) = p[i];
    }
    return x;
}
}  // namespace detail

/// Decisions of the dual-decomposition policy at fixed multipliers.
inline Matrix cmac_dual_policy(const Matrix& obs, std::span<const double> lambda, double mu) {
    return detail::cmac_decisions(obs, lambda.size(), lambda, mu);
}

/// Long-term optimal C-MAC policy. The multipliers y = (lambda, mu) follow a
/// damped projected subgradient method on the dual function, with constraint
/// means taken over `samples`; the returned metrics are on the same samples.
inline OracleResult cmac_dual_oracle(const CmacProblem& problem, const Matrix& samples,
                                     const CmacOracleOptions& opt = {}) {
    if (samples.rows() < 1 || samples.cols() != problem.observation_size())
        throw dimension_error("cmac_dual_oracle: samples " + shape_string(samples));
    const std::size_t n = problem.num_nodes();
    const auto G = problem.bounds();
    const std::size_t K = G.size();
    std::vector<double> y(K, opt.initial_dual), dir(K, 0.0);
    OracleResult res;
    auto violations = [&](const std::vector<double>& means) {
        double worst = 0, worst_slack = 0;
        for (std::size_t k = 0; k < K; ++k) {
            const double rel = (means[k] - G[k]) / G[k];
            worst = std::max(worst, rel);
            if (y[k] > 0) worst_slack = std::max(worst_slack, std::abs(rel));
        }
        return std::pair{worst, worst_slack};
    };
    std::vector<double> means(K);
    for (int t = 1; t <= opt.max_iterations; ++t) {
        Matrix x = detail::cmac_decisions(samples, n, std::span(y).first(n), y[n]);
        std::fill(means.begin(), means.end(), 0.0);
        for (Index r = 0; r < samples.rows(); ++r) {
            double it = 0;
            for (std::size_t i = 0; i < n; ++i) {
                means[i] += x(r, Index(i));
                it += samples(r, Index(2 * i + 1)) * x(r, Index(i));
            }
            means[n] += it;
        }
        for (double& m : means) m /= double(samples.rows());
        res.iterations = t;
        auto [viol, slack] = violations(means);
        if (viol <= opt.tol && slack <= opt.tol) {
            res.converged = true;
            break;
        }
        const double alpha = opt.step / std::sqrt(double(t));
        for (std::size_t k = 0; k < K; ++k) {
            dir[k] = opt.damping * dir[k] + (1.0 - opt.damping) * (means[k] - G[k]) / G[k];
            y[k] = std::max(0.0, y[k] + alpha * dir[k] * std::max(y[k], 1e-3));
        }
    }
    res.lambda.assign(y.begin(), y.begin() + Index(n));
    res.mu = y[n];
    Matrix x = detail::cmac_decisions(samples, n, res.lambda, res.mu);
    res.metrics = evaluate_decisions(problem, samples, x);
    res.max_violation = res.metrics.max_relative_violation(G);
    for (std::size_t k = 0; k < K; ++k) res.duality_gap += y[k] * (G[k] - res.metrics.constraint_means[k]);
    if (!res.converged)
        res.diagnostics = "no convergence after " + std::to_string(res.iterations) +
                          " iterations; max relative violation " + std::to_string(res.max_violation);
    return res;
}

// ---------------------------------------------------------------------------
// Cognitive MAC: per-realization constraints
// ---------------------------------------------------------------------------

/// max log(1 + sum h_i p_i) s.t. 0 <= p_i <= P, sum g_i p_i <= Gamma.
/// The objective depends on sum h_i p_i only, so this is a fractional
/// knapsack: fill users by decreasing h_i / g_i.
inline std::vector<double> cmac_short_term(std::span<const double> h, std::span<const double> g, double P,
                                           double gamma) {
    if (h.size() != g.size()) throw dimension_error("cmac_short_term: h and g differ in length");
    std::vector<std::size_t> order(h.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return h[a] * g[b] > h[b] * g[a]; });
    std::vector<double> p(h.size(), 0.0);
    double budget = std::max(0.0, gamma);
    for (std::size_t i : order) {
        if (g[i] <= 0) {
            p[i] = P;
            continue;
        }
        p[i] = std::min(P, budget / g[i]);
        budget -= g[i] * p[i];
        if (budget <= 0) budget = 0;
    }
    return p;
}

// ---------------------------------------------------------------------------
// Interference channel: WMMSE and grid search
// ---------------------------------------------------------------------------

struct WmmseResult {
    std::vector<double> p;
    int iterations = 0;
    std::vector<double> history;  // sum rate after each iteration
};

/// Scalar WMMSE for the sum rate with 0 <= p_i <= peak, started at p_i = init.
/// With v_i = sqrt(p_i) and noise power 1:
///   u_i = sqrt(h_ii) v_i / (1 + sum_j h_ji v_j^2)
///   w_i = 1 / (1 - u_i sqrt(h_ii) v_i)
///   v_i = clamp(w_i u_i sqrt(h_ii) / sum_j w_j u_j^2 h_ij, 0, sqrt(peak))
/// where h_ji is the gain from transmitter j to receiver i.
inline WmmseResult wmmse(const IfcChannel& H, double peak, double init, int max_iter = 500, double tol = 1e-9) {
    if (!(peak > 0)) throw std::invalid_argument("wmmse: peak power must be > 0");
    const std::size_t n = H.n;
    std::vector<double> v(n, std::sqrt(std::clamp(init, 0.0, peak))), u(n), w(n), p(n);
    const double vmax = std::sqrt(peak);
    auto powers = [&] {
        for (std::size_t i = 0; i < n; ++i) p[i] = v[i] * v[i];
        return p;
    };
    WmmseResult res;
    double prev = ifc_sum_cost(H, powers());
    for (int it = 1; it <= max_iter; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double rx = 1.0;
            for (std::size_t j = 0; j < n; ++j) rx += H(j, i) * v[j] * v[j];
            u[i] = std::sqrt(H(i, i)) * v[i] / rx;
            w[i] = 1.0 / (1.0 - u[i] * std::sqrt(H(i, i)) * v[i]);
        }
        for (std::size_t i = 0; i < n; ++i) {
            double den = 0;
            for (std::size_t j = 0; j < n; ++j) den += w[j] * u[j] * u[j] * H(i, j);
            const double num = w[i] * u[i] * std::sqrt(H(i, i));
            v[i] = den > 0 ? std::clamp(num / den, 0.0, vmax) : vmax;
        }
        const double cur = ifc_sum_cost(H, powers());
        res.history.push_back(cur);
        res.iterations = it;
        if (cur < prev - 1e-9 * std::max(1.0, std::abs(prev)))
            throw std::logic_error("wmmse: sum rate decreased from " + std::to_string(prev) + " to " +
                                   std::to_string(cur));
        if (std::abs(cur - prev) < tol) break;
        prev = cur;
    }
    res.p = powers();
    return res;
}

struct GridResult {
    std::vector<double> p;
    double value = -std::numeric_limits<double>::infinity();
};

inline constexpr std::size_t kGridMaxNodes = 3;

/// Exhaustive search of {0, d, 2d, ..., peak}^N, d = peak / steps, followed by
/// `refinements` rounds of the same search on a box of two cells around the
/// incumbent.
inline GridResult grid_oracle(const IfcChannel& H, IfcObjective objective, double peak, int steps,
                              int refinements = 0) {
    const std::size_t n = H.n;
    if (n > kGridMaxNodes)
        throw std::invalid_argument("grid_oracle: " + std::to_string(n) + " nodes exceeds the limit of " +
                                    std::to_string(kGridMaxNodes));
    if (steps < 1) throw std::invalid_argument("grid_oracle: need at least one step");
    auto value = [&](std::span<const double> p) {
        return objective == IfcObjective::sum_rate ? ifc_sum_cost(H, p) : ifc_minrate_cost(H, p);
    };
    GridResult best;
    std::vector<double> lo(n, 0.0), hi(n, peak);
    for (int round = 0; round <= refinements; ++round) {
        std::vector<int> idx(n, 0);
        std::vector<double> p(n);
        while (true) {
            for (std::size_t i = 0; i < n; ++i) p[i] = lo[i] + (hi[i] - lo[i]) * idx[i] / steps;
            const double val = value(p);
            if (val > best.value) {
                best.value = val;
                best.p = p;
            }
            std::size_t k = 0;
            while (k < n && ++idx[k] > steps) idx[k++] = 0;
            if (k == n) break;
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double cell = (hi[i] - lo[i]) / steps;
            lo[i] = std::max(0.0, best.p[i] - 2 * cell);
            hi[i] = std::min(peak, best.p[i] + 2 * cell);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Simple heuristics
// ---------------------------------------------------------------------------

enum class Heuristic { peak, random, fixed_cmac };

inline std::string to_string(Heuristic h) {
    switch (h) {
        case Heuristic::peak: return "peak";
        case Heuristic::random: return "random";
        case Heuristic::fixed_cmac: return "fixed";
    }
    return "?";
}

/// peak: p_i = P_P. random: p_i ~ U[0, P_P]. fixed_cmac: p_i = min(P, Gamma / g_i).
inline Matrix heuristic_decisions(Heuristic kind, const Problem& problem, const Matrix& obs, Rng& rng) {
    const Index N = Index(problem.num_nodes());
    Matrix x(obs.rows(), N);
    switch (kind) {
        case Heuristic::peak:
        case Heuristic::random: {
            const auto* ifc = dynamic_cast<const IfcProblem*>(&problem);
            if (!ifc) throw std::invalid_argument(to_string(kind) + " power applies to the interference channel");
            std::uniform_real_distribution<double> unif(0.0, ifc->peak_power());
            for (Index r = 0; r < x.rows(); ++r)
                for (Index i = 0; i < N; ++i) x(r, i) = kind == Heuristic::peak ? ifc->peak_power() : unif(rng);
            return x;
        }
        case Heuristic::fixed_cmac: {
            const auto* cmac = dynamic_cast<const CmacProblem*>(&problem);
            if (!cmac) throw std::invalid_argument("fixed allocation applies to the cognitive MAC");
            for (Index r = 0; r < x.rows(); ++r)
                for (Index i = 0; i < N; ++i) x(r, i) = std::min(cmac->power(), cmac->gamma() / obs(r, 2 * i + 1));
            return x;
        }
    }
    throw std::invalid_argument("unknown heuristic");
}

inline Matrix short_term_decisions(const CmacProblem& problem, const Matrix& obs) {
    const Index N = Index(problem.num_nodes());
    Matrix x(obs.rows(), N);
    for (Index r = 0; r < obs.rows(); ++r) {
        auto c = cmac_channel_from_row(row_span(obs, r));
        auto p = cmac_short_term(c.h, c.g, problem.power(), problem.gamma());
        for (Index i = 0; i < N; ++i) x(r, i) = p[i];
    }
    return x;
}

inline Matrix wmmse_decisions(const IfcProblem& problem, const Matrix& obs, int max_iter = 500, double tol = 1e-9) {
    const Index N = Index(problem.num_nodes());
    Matrix x(obs.rows(), N);
    for (Index r = 0; r < obs.rows(); ++r) {
        auto res = wmmse(ifc_channel_from_row(row_span(obs, r)), problem.peak_power(), problem.avg_power(), max_iter, tol);
        for (Index i = 0; i < N; ++i) x(r, i) = res.p[i];
    }
    return x;
}

// ---------------------------------------------------------------------------
// Naive distributed use of a centralized network
// ---------------------------------------------------------------------------

/// Node i feeds the centralized network its own observation block with zeros
/// in place of every other node's, and keeps output i. Batch-norm layers use
/// the running statistics from training.
class NaivePolicy {
public:
    NaivePolicy() = default;
    NaivePolicy(CentralizedPolicy net, std::vector<Index> obs_dims) : net_(std::move(net)), dims_(std::move(obs_dims)) {}

    Var forward(Tape& tape, const Matrix& obs, Mode) {
        auto off = block_offsets(dims_);
        if (obs.cols() != off.back()) throw dimension_error("NaivePolicy: observation " + shape_string(obs));
        std::vector<Var> cols;
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            Matrix masked = Matrix::Zero(obs.rows(), obs.cols());
            masked.middleCols(off[i], dims_[i]) = obs.middleCols(off[i], dims_[i]);
            cols.push_back(slice_cols(net_.forward(tape, masked, Mode::eval), Index(i), 1));
        }
        return concat_cols(std::span<const Var>(cols));
    }
    std::vector<Tensor*> parameters() { return net_.parameters(); }

private:
    CentralizedPolicy net_;
    std::vector<Index> dims_;
};

// ---------------------------------------------------------------------------
// Supervised label fitting
// ---------------------------------------------------------------------------

struct SupervisedConfig {
    Index train_size = 20000;
    Index batch_size = 500;
    long iterations = 5000;
    double lr = 1e-3;
    std::uint64_t seed = 1;
};

/// Fits a centralized network to WMMSE decisions by mean squared error on a
/// fixed labelled set.
inline CentralizedPolicy train_supervised(const IfcProblem& problem, const SupervisedConfig& cfg) {
    Rng data_rng(derive_seed(cfg.seed, 201)), init_rng(derive_seed(cfg.seed, 202)), pick_rng(derive_seed(cfg.seed, 203));
    const Matrix obs = problem.sample(cfg.train_size, data_rng);
    const Matrix labels = wmmse_decisions(problem, obs);
    auto policy = make_centralized_policy(problem, centralized_architecture(problem), init_rng);
    AdamOptions opts;
    opts.lr = cfg.lr;
    AdamState adam(opts);
    std::uniform_int_distribution<Index> pick(0, cfg.train_size - 1);
    Matrix xb(cfg.batch_size, obs.cols()), yb(cfg.batch_size, labels.cols());
    for (long t = 0; t < cfg.iterations; ++t) {
        for (Index r = 0; r < cfg.batch_size; ++r) {
            const Index k = pick(pick_rng);
            xb.row(r) = obs.row(k);
            yb.row(r) = labels.row(k);
        }
        Tape tape;
        Var err = sub(policy.forward(tape, xb, Mode::train), tape.constant(yb));
        Var loss = mean(mul(err, err));
        auto params = policy.parameters();
        for (Tensor* p : params) p->zero_grad();
        tape.backward(loss);
        adam.apply(params);
    }
    return policy;
}

}  // namespace pdnet
