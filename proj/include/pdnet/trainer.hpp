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
#include <concepts>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pdnet/autodiff.hpp"
#include "pdnet/mlp.hpp"
#include "pdnet/problems.hpp"

namespace pdnet {

/// Anything that maps a batch of global observations to a batch of decisions
/// on a tape and exposes its trainable tensors.
template <class P>
concept Policy = std::copyable<P> && requires(P p, Tape& tape, const Matrix& obs, Mode mode) {
    { p.forward(tape, obs, mode) } -> std::same_as<Var>;
    { p.parameters() } -> std::same_as<std::vector<Tensor*>>;
};

/// Centralized policy: one network sees the whole observation vector and
/// emits every node's decision.
class CentralizedPolicy {
public:
    CentralizedPolicy() = default;
    explicit CentralizedPolicy(Mlp net) : net_(std::move(net)) {}

    Var forward(Tape& tape, const Matrix& obs, Mode mode) { return net_.forward(tape, tape.constant(obs), mode); }
    std::vector<Tensor*> parameters() { return net_.parameters(); }
    Mlp& net() { return net_; }
    const Mlp& net() const { return net_; }

private:
    Mlp net_;
};

struct Architecture {
    int hidden_layers = 4;
    int width = 20;
    bool batch_norm = true;
};

/// Hidden ReLU layers followed by an output layer that lands in the feasible
/// set: (.)_+ for the nonnegative orthant, P_P * sigmoid for a box [0, P_P].
inline std::vector<LayerSpec> policy_layers(const Problem& problem, const Architecture& arch, Index out_dim) {
    std::vector<LayerSpec> specs;
    for (int r = 0; r < arch.hidden_layers; ++r) specs.push_back(LayerSpec::hidden(arch.width, arch.batch_norm));
    FeasibleSet set = problem.node_set();
    if (set.is_nonneg()) specs.push_back(LayerSpec::projection(FeasibleSet::nonneg(out_dim)));
    else specs.push_back(LayerSpec::scaled_sigmoid(out_dim, set.hi(0)));
    return specs;
}

/// Default centralized architecture: 4 hidden layers of width 10N, or
/// 5 x 20N for the min-rate problem.
inline Architecture centralized_architecture(const Problem& problem) {
    const int n = int(problem.num_nodes());
    if (problem.id() == ProblemId::p5) return {5, 20 * n, true};
    return {4, 10 * n, true};
}

inline CentralizedPolicy make_centralized_policy(const Problem& problem, const Architecture& arch, Rng& rng) {
    return CentralizedPolicy(Mlp(problem.observation_size(), policy_layers(problem, arch, problem.decision_size()), rng));
}

// ---------------------------------------------------------------------------
// Configuration and state
// ---------------------------------------------------------------------------

struct TrainConfig {
    Index batch_size = 1000;
    long iterations = 50000;
    double lr = 1e-3;
    std::optional<double> lr_dual;  // defaults to lr
    long checkpoint_interval = 500;
    Index validation_size = 100000;
    std::uint64_t seed = 1;
    bool freeze_duals = false;
    double grad_norm_limit = 1e6;
    AdamOptions adam{};
    /// Batch-norm running statistics are recomputed from this many validation
    /// samples before every validation pass (0 keeps the moving averages).
    Index calibration_size = 20000;
    /// Final fraction of iterations run with batch-norm statistics frozen at a
    /// calibration snapshot, so the multipliers settle on the deployed network.
    double bn_freeze_fraction = 0.4;
    /// Over the same final window both step sizes decay linearly towards 0.
    bool anneal = true;

    long freeze_start() const {
        return iterations - static_cast<long>(std::floor(bn_freeze_fraction * double(iterations)));
    }

    /// Step-size multiplier for the update taken at 0-based iteration t.
    double step_scale(long t) const {
        const long start = freeze_start();
        if (!anneal || t < start || iterations <= start) return 1.0;
        return double(iterations - t) / double(iterations - start);
    }

    double dual_rate() const { return lr_dual.value_or(lr); }

    std::uint64_t batch_seed() const { return derive_seed(seed, 101); }
    std::uint64_t validation_seed() const { return derive_seed(seed, 102); }
    std::uint64_t init_seed() const { return derive_seed(seed, 103); }
    std::uint64_t noise_seed() const { return derive_seed(seed, 104); }

    void validate() const {
        if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch size must be >= 2");
        if (!(lr > 0) || !(dual_rate() > 0)) throw std::invalid_argument("TrainConfig: learning rates must be > 0");
        if (iterations < 0) throw std::invalid_argument("TrainConfig: iterations must be >= 0");
        if (checkpoint_interval < 1) throw std::invalid_argument("TrainConfig: checkpoint interval must be >= 1");
        if (validation_size < 1) throw std::invalid_argument("TrainConfig: validation size must be >= 1");
        if (calibration_size == 1 || calibration_size < 0)
            throw std::invalid_argument("TrainConfig: calibration size must be 0 or >= 2");
        if (!(bn_freeze_fraction >= 0 && bn_freeze_fraction <= 1))
            throw std::invalid_argument("TrainConfig: batch-norm freeze fraction must be in [0, 1]");
    }

    /// Hyperparameters used in the original experiments.
    static TrainConfig paper_scale() {
        TrainConfig c;
        c.batch_size = 5000;
        c.iterations = 500000;
        c.lr = 5e-5;
        c.validation_size = 1000000;
        return c;
    }

    /// Minutes-scale budget.
    static TrainConfig desk_scale() {
        TrainConfig c;
        c.batch_size = 1000;
        c.iterations = 10000;
        c.lr = 1e-3;
        c.validation_size = 100000;
        return c;
    }
};

struct DualState {
    std::vector<double> lambda;
};

struct LogRow {
    long iteration = 0;
    double lagrangian = 0;
    double cost = 0;                 // mean utility (positive)
    std::vector<double> slack;       // mean g_k - G_k
    std::vector<double> lambda;
    double val_metric = 0;
};

/// One row per checkpoint; training quantities are averaged over the window
/// since the previous checkpoint.
struct ConvergenceLog {
    std::vector<LogRow> rows;

    void write_csv(std::ostream& os) const {
        const std::size_t K = rows.empty() ? 0 : rows.front().lambda.size();
        os << "iteration,lagrangian,cost";
        for (std::size_t k = 0; k < K; ++k) os << ",slack_" << k + 1;
        for (std::size_t k = 0; k < K; ++k) os << ",lambda_" << k + 1;
        os << ",val_metric\n";
        os << std::setprecision(17);
        for (const auto& r : rows) {
            os << r.iteration << ',' << r.lagrangian << ',' << r.cost;
            for (double s : r.slack) os << ',' << s;
            for (double l : r.lambda) os << ',' << l;
            os << ',' << r.val_metric << '\n';
        }
    }
};

enum class TrainStatus { completed, diverged };

template <Policy P>
struct TrainResult {
    P policy;
    DualState dual;
    ConvergenceLog log;
    TrainStatus status = TrainStatus::completed;
    std::string message;
    long skipped_steps = 0;
};

// ---------------------------------------------------------------------------
// Lagrangian and evaluation
// ---------------------------------------------------------------------------

/// mean(cost) + sum_k lambda_k (mean(g_k) - G_k) from per-sample costs (S x 1)
/// and constraint values (S x K).
inline Var lagrangian(const Var& cost, const Var& g, std::span<const double> lambda,
                      std::span<const double> bounds) {
    if (lambda.size() != bounds.size() || Index(lambda.size()) != g.cols())
        throw dimension_error("lagrangian: " + std::to_string(lambda.size()) + " multipliers, " +
                              std::to_string(bounds.size()) + " bounds, " + std::to_string(g.cols()) +
                              " constraint columns");
    for (double l : lambda)
        if (!(l >= 0)) throw std::invalid_argument("lagrangian: multipliers must be nonnegative");
    Tape& t = *cost.tape();
    Var L = mean(cost);
    if (!lambda.empty()) {
        RowVector lam = Eigen::Map<const RowVector>(lambda.data(), Index(lambda.size()));
        RowVector G = Eigen::Map<const RowVector>(bounds.data(), Index(bounds.size()));
        Var slack = sub(mean(g, 0), t.constant(G));
        L = add(L, sum(mul(slack, t.constant(lam))));
    }
    if (!std::isfinite(L.scalar())) throw numeric_error("lagrangian: non-finite value");
    return L;
}

/// Test-set statistics of a batch of decisions.
struct Metrics {
    double mean_utility = 0;
    double ci95 = 0;                     // half-width of the 95% interval on the mean
    std::vector<double> constraint_means;
    std::vector<bool> feasible;          // mean g_k <= G_k (1 + rel_tol)
    std::vector<double> utilities;
    Matrix decisions;

    bool all_feasible() const { return std::all_of(feasible.begin(), feasible.end(), [](bool b) { return b; }); }
    double max_relative_violation(std::span<const double> bounds) const {
        double worst = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < bounds.size(); ++k)
            worst = std::max(worst, (constraint_means[k] - bounds[k]) / bounds[k]);
        return worst;
    }
};

/// Scores decisions with the scalar per-sample functions.
inline Metrics evaluate_decisions(const Problem& problem, const Matrix& obs, const Matrix& x,
                                  double rel_tol = 0.02) {
    if (obs.rows() != x.rows() || x.cols() != problem.decision_size())
        throw dimension_error("evaluate: decisions " + shape_string(x) + " for " + shape_string(obs) + " observations");
    Metrics m;
    const auto G = problem.bounds();
    m.constraint_means.assign(G.size(), 0.0);
    m.utilities.resize(obs.rows());
    double s = 0, s2 = 0;
    for (Index r = 0; r < obs.rows(); ++r) {
        const double u = problem.utility_of(row_span(obs, r), row_span(x, r));
        m.utilities[r] = u;
        s += u;
        s2 += u * u;
        auto g = problem.constraints_of(row_span(obs, r), row_span(x, r));
        for (std::size_t k = 0; k < g.size(); ++k) m.constraint_means[k] += g[k];
    }
    const double n = double(obs.rows());
    m.mean_utility = s / n;
    const double var = n > 1 ? std::max(0.0, (s2 - n * m.mean_utility * m.mean_utility) / (n - 1)) : 0.0;
    m.ci95 = 1.96 * std::sqrt(var / n);
    for (std::size_t k = 0; k < G.size(); ++k) {
        m.constraint_means[k] /= n;
        m.feasible.push_back(m.constraint_means[k] <= G[k] * (1.0 + rel_tol));
    }
    m.decisions = x;
    return m;
}

/// Decisions of a policy on a data set, computed in chunks.
template <Policy P>
Matrix policy_decisions(P& policy, const Matrix& obs, Mode mode = Mode::eval, Index chunk = 8192) {
    Matrix x;
    for (Index r0 = 0; r0 < obs.rows(); r0 += chunk) {
        const Index len = std::min(chunk, obs.rows() - r0);
        Tape tape;
        Matrix part = policy.forward(tape, obs.middleRows(r0, len), mode).value();
        if (x.size() == 0) x.resize(obs.rows(), part.cols());
        x.middleRows(r0, len) = part;
    }
    return x;
}

/// Replaces every batch-norm running estimate with the exact statistics of
/// `data`, layer by layer, with the weights fixed.
template <Policy P>
void calibrate_batch_norm(P& policy, const Matrix& data) {
    Tape tape;
    policy.forward(tape, data, Mode::calibrate);
}

template <Policy P>
Metrics evaluate(P& policy, const Problem& problem, const Matrix& test_set, Mode mode = Mode::eval,
                 double rel_tol = 0.02) {
    return evaluate_decisions(problem, test_set, policy_decisions(policy, test_set, mode), rel_tol);
}

// ---------------------------------------------------------------------------
// Primal-dual trainer
// ---------------------------------------------------------------------------

struct StepInfo {
    double lagrangian = 0;
    double cost = 0;
    std::vector<double> constraint_means;
    double grad_norm = 0;
    bool skipped = false;
};

/// Joint mini-batch updates: an Adam step on the network parameters along the
/// gradient of the batch Lagrangian, and a projected subgradient step on the
/// multipliers, both driven by the same batch at the pre-update parameters.
template <Policy P>
class PrimalDualTrainer {
public:
    PrimalDualTrainer(const Problem& problem, P policy, TrainConfig config)
        : problem_(problem),
          policy_(std::move(policy)),
          config_(config),
          bounds_(problem.bounds()),
          batch_rng_(config.batch_seed()) {
        config_.validate();
        AdamOptions opts = config_.adam;
        opts.lr = config_.lr;
        adam_ = AdamState(opts);
        dual_.lambda.assign(bounds_.size(), 0.0);
    }

    P& policy() { return policy_; }
    const DualState& dual() const { return dual_; }
    DualState& dual() { return dual_; }
    long iteration() const { return t_; }
    const TrainConfig& config() const { return config_; }
    const std::vector<double>& bounds() const { return bounds_; }
    Rng& batch_rng() { return batch_rng_; }

    /// Builds the batch Lagrangian at the current parameters and multipliers.
    /// Also returns the mean utility and constraint means of the batch.
    struct Terms {
        Var value;
        double cost = 0;
        std::vector<double> constraint_means;
    };

    Terms batch_lagrangian(Tape& tape, const Matrix& batch, Mode mode = Mode::train) {
        Var x = policy_.forward(tape, batch, mode);
        Var u = problem_.utility(tape, batch, x);
        Var g = problem_.constraints(tape, batch, x);
        Terms terms;
        terms.value = lagrangian(neg(u), g, dual_.lambda, bounds_);
        terms.cost = u.value().mean();
        RowVector gm = g.value().colwise().mean();
        terms.constraint_means.assign(gm.data(), gm.data() + gm.size());
        return terms;
    }

    /// Backpropagates the Lagrangian and applies one Adam step. Steps whose
    /// gradient norm exceeds the configured limit are skipped.
    StepInfo primal_step(Tape& tape, const Terms& terms) {
        auto params = policy_.parameters();
        for (Tensor* p : params) p->zero_grad();
        tape.backward(terms.value);
        double sq = 0;
        for (Tensor* p : params) sq += p->grad().squaredNorm();
        StepInfo info;
        info.lagrangian = terms.value.scalar();
        info.cost = terms.cost;
        info.constraint_means = terms.constraint_means;
        info.grad_norm = std::sqrt(sq);
        if (!std::isfinite(info.grad_norm) || info.grad_norm > config_.grad_norm_limit) {
            info.skipped = true;
            ++skipped_;
            return info;
        }
        adam_.apply(params);
        return info;
    }

    /// lambda_k <- (lambda_k + eta (mean g_k - G_k))_+
    void dual_step(std::span<const double> constraint_means, double scale = 1.0) {
        if (config_.freeze_duals) return;
        apply_dual_step(dual_, constraint_means, bounds_, config_.dual_rate() * scale);
    }

    static void apply_dual_step(DualState& dual, std::span<const double> constraint_means,
                                std::span<const double> bounds, double rate) {
        for (std::size_t k = 0; k < dual.lambda.size(); ++k)
            dual.lambda[k] = std::max(0.0, dual.lambda[k] + rate * (constraint_means[k] - bounds[k]));
    }

    /// One iteration: fresh batch, primal step, dual step.
    StepInfo iterate() {
        Matrix batch = problem_.sample(config_.batch_size, batch_rng_);
        Tape tape;
        Terms terms = batch_lagrangian(tape, batch, frozen_ ? Mode::eval_stochastic : Mode::train);
        const double scale = config_.step_scale(t_);
        adam_.options().lr = config_.lr * scale;
        StepInfo info = primal_step(tape, terms);
        dual_step(terms.constraint_means, scale);
        ++t_;
        for (double l : dual_.lambda)
            if (!(l >= 0)) throw std::logic_error("dual variable left the nonnegative orthant");
        return info;
    }

    /// Runs the configured number of iterations with periodic validation.
    /// A non-finite forward pass or validation metric restores the last good
    /// checkpoint and stops.
    TrainResult<P> train() {
        Rng val_rng(config_.validation_seed());
        const Matrix validation = problem_.sample(config_.validation_size, val_rng);
        TrainResult<P> result;
        P last_good = policy_;
        DualState last_dual = dual_;
        const std::size_t K = bounds_.size();
        double win_L = 0, win_cost = 0;
        std::vector<double> win_g(K, 0.0);
        long win_n = 0;

        auto restore = [&](std::string why) {
            policy_ = last_good;
            dual_ = last_dual;
            result.status = TrainStatus::diverged;
            result.message = std::move(why);
        };

        auto calibrate = [&] {
            if (config_.calibration_size > 0)
                calibrate_batch_norm(policy_, validation.topRows(std::min(config_.calibration_size, validation.rows())));
        };

        while (t_ < config_.iterations) {
            if (!frozen_ && t_ >= config_.freeze_start() && config_.calibration_size > 0) {
                try {
                    calibrate();
                } catch (const numeric_error& e) {
                    restore(std::string("calibration: ") + e.what());
                    break;
                }
                frozen_ = true;
            }
            StepInfo info;
            try {
                info = iterate();
            } catch (const numeric_error& e) {
                restore(std::string("iteration ") + std::to_string(t_ + 1) + ": " + e.what());
                break;
            }
            win_L += info.lagrangian;
            win_cost += info.cost;
            for (std::size_t k = 0; k < K; ++k) win_g[k] += info.constraint_means[k];
            ++win_n;
            if (t_ % config_.checkpoint_interval == 0 || t_ == config_.iterations) {
                LogRow row;
                row.iteration = t_;
                row.lagrangian = win_L / double(win_n);
                row.cost = win_cost / double(win_n);
                for (std::size_t k = 0; k < K; ++k) row.slack.push_back(win_g[k] / double(win_n) - bounds_[k]);
                row.lambda = dual_.lambda;
                try {
                    if (!frozen_) calibrate();
                    row.val_metric = evaluate(policy_, problem_, validation).mean_utility;
                } catch (const numeric_error&) {
                    row.val_metric = std::numeric_limits<double>::quiet_NaN();
                }
                result.log.rows.push_back(row);
                if (!std::isfinite(row.val_metric)) {
                    restore("validation metric is not finite at iteration " + std::to_string(t_));
                    break;
                }
                last_good = policy_;
                last_dual = dual_;
                win_L = win_cost = 0;
                std::fill(win_g.begin(), win_g.end(), 0.0);
                win_n = 0;
            }
        }
        result.policy = policy_;
        result.dual = dual_;
        result.skipped_steps = skipped_;
        return result;
    }

private:
    const Problem& problem_;
    P policy_;
    TrainConfig config_;
    std::vector<double> bounds_;
    Rng batch_rng_;
    AdamState adam_;
    DualState dual_;
    long t_ = 0;
    long skipped_ = 0;
    bool frozen_ = false;
};

template <Policy P>
TrainResult<P> train(const Problem& problem, P policy, const TrainConfig& config) {
    PrimalDualTrainer<P> trainer(problem, std::move(policy), config);
    return trainer.train();
}

/// Builds and trains a centralized network with the default architecture.
inline TrainResult<CentralizedPolicy> train_centralized(const Problem& problem, const TrainConfig& config,
                                                        std::optional<Architecture> arch = std::nullopt) {
    Rng init(config.init_seed());
    auto policy = make_centralized_policy(problem, arch.value_or(centralized_architecture(problem)), init);
    return train(problem, std::move(policy), config);
}

}  // namespace pdnet
