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
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pdnet/autodiff.hpp"
#include "pdnet/mlp.hpp"

// Power-control problems with long-term (expectation) constraints.
//
// All rates are in nats (natural log) with unit noise power. Observations are
// stored one sample per row, laid out as the concatenation of the per-node
// local observations a_1 | a_2 | ... | a_N:
//
//   cognitive MAC:  a_i = (h_i, g_i)                 -> row = h1 g1 h2 g2 ...
//   interference:   a_i = (h_1i, h_2i, ..., h_Ni)    -> row = column-major H
//
// where h_ji is the gain from transmitter j to receiver i.

namespace pdnet {

enum class ProblemId { p3, p4, p5 };

inline std::string to_string(ProblemId id) {
    switch (id) {
        case ProblemId::p3: return "p3";
        case ProblemId::p4: return "p4";
        case ProblemId::p5: return "p5";
    }
    return "?";
}

inline ProblemId problem_from_string(const std::string& s) {
    if (s == "p3" || s == "P3") return ProblemId::p3;
    if (s == "p4" || s == "P4") return ProblemId::p4;
    if (s == "p5" || s == "P5") return ProblemId::p5;
    throw std::invalid_argument("unknown problem '" + s + "' (expected p3, p4 or p5)");
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

/// One operating point of a sweep. For the cognitive MAC the SNR sets the
/// per-user average power budget P; for the interference channel it sets the
/// average power P_A, with the peak power P_P = pp_ratio * P_A.
struct SweepPoint {
    double snr_db = 0.0;
    double gamma = 1.0;      // interference-temperature bound
    double pp_ratio = 1.0;   // P_P / P_A
    double backhaul_bits = 0;

    double power() const { return db_to_linear(snr_db); }
    double avg_power() const { return power(); }
    double peak_power() const { return pp_ratio * power(); }
    /// Usable bits per link: non-integer capacities are floored.
    int bits() const { return static_cast<int>(std::floor(backhaul_bits)); }

    void validate() const {
        if (!(gamma > 0)) throw std::invalid_argument("SweepPoint: gamma must be positive");
        if (!(pp_ratio >= 1.0)) throw std::invalid_argument("SweepPoint: P_A must not exceed P_P");
        if (!(backhaul_bits >= 0)) throw std::invalid_argument("SweepPoint: backhaul bits must be nonnegative");
    }
};

// ---------------------------------------------------------------------------
// Per-realization channel samples and scalar cost/constraint functions
// ---------------------------------------------------------------------------

struct CmacChannel {
    std::vector<double> h;  // secondary user -> secondary base station
    std::vector<double> g;  // secondary user -> primary user
};

struct IfcChannel {
    std::size_t n = 0;
    std::vector<double> gains;  // gains[j * n + i] = h_ji

    IfcChannel() = default;
    explicit IfcChannel(std::size_t users) : n(users), gains(users * users, 0.0) {}
    double operator()(std::size_t from, std::size_t to) const { return gains[from * n + to]; }
    double& operator()(std::size_t from, std::size_t to) { return gains[from * n + to]; }
};

inline double cmac_cost(std::span<const double> h, std::span<const double> /*g*/,
                        std::span<const double> p) {
    double s = 0;
    for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * p[i];
    return std::log1p(s);
}

/// (p_1, ..., p_N, sum_i g_i p_i); bounds are (P, ..., P, Gamma).
inline std::vector<double> cmac_constraints(std::span<const double> /*h*/, std::span<const double> g,
                                            std::span<const double> p) {
    std::vector<double> out(p.begin(), p.end());
    double it = 0;
    for (std::size_t i = 0; i < g.size(); ++i) it += g[i] * p[i];
    out.push_back(it);
    return out;
}

inline std::vector<double> ifc_rates(const IfcChannel& H, std::span<const double> p) {
    std::vector<double> r(H.n);
    for (std::size_t i = 0; i < H.n; ++i) {
        double interference = 1.0;
        for (std::size_t j = 0; j < H.n; ++j)
            if (j != i) interference += H(j, i) * p[j];
        r[i] = std::log1p(H(i, i) * p[i] / interference);
    }
    return r;
}

inline double ifc_sum_cost(const IfcChannel& H, std::span<const double> p) {
    double s = 0;
    for (double r : ifc_rates(H, p)) s += r;
    return s;
}

inline double ifc_minrate_cost(const IfcChannel& H, std::span<const double> p) {
    auto r = ifc_rates(H, p);
    return *std::min_element(r.begin(), r.end());
}

inline CmacChannel cmac_channel_from_row(std::span<const double> row) {
    CmacChannel c;
    for (std::size_t i = 0; 2 * i + 1 < row.size(); ++i) {
        c.h.push_back(row[2 * i]);
        c.g.push_back(row[2 * i + 1]);
    }
    return c;
}

inline std::vector<double> cmac_row(const CmacChannel& c) {
    std::vector<double> row;
    for (std::size_t i = 0; i < c.h.size(); ++i) {
        row.push_back(c.h[i]);
        row.push_back(c.g[i]);
    }
    return row;
}

inline IfcChannel ifc_channel_from_row(std::span<const double> row) {
    const auto n = static_cast<std::size_t>(std::lround(std::sqrt(double(row.size()))));
    if (n * n != row.size()) throw dimension_error("ifc_channel_from_row: length is not a square");
    IfcChannel H(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) H(j, i) = row[i * n + j];
    return H;
}

inline std::vector<double> ifc_row(const IfcChannel& H) {
    std::vector<double> row(H.n * H.n);
    for (std::size_t i = 0; i < H.n; ++i)
        for (std::size_t j = 0; j < H.n; ++j) row[i * H.n + j] = H(j, i);
    return row;
}

inline std::span<const double> row_span(const Matrix& m, Index r) {
    return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

/// i.i.d. unit-mean exponential gains (Rayleigh fading power), strictly > 0.
inline Matrix exponential_gains(Index rows, Index cols, Rng& rng) {
    std::exponential_distribution<double> expo(1.0);
    Matrix m(rows, cols);
    for (Index k = 0; k < m.size(); ++k) {
        double e = 0;
        while (e <= 0.0) e = expo(rng);
        m.data()[k] = e;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Problem interface
// ---------------------------------------------------------------------------

/// A stochastic program  max E[u(a, x)]  s.t.  E[g_k(a, x)] <= G_k,  x_i in X_i.
///
/// The trainer minimizes f = -u. Batched functions take observations (S x A)
/// and decisions (S x N) and return per-sample columns.
class Problem {
public:
    explicit Problem(std::size_t nodes) : n_(nodes) {
        if (nodes < 1) throw std::invalid_argument("Problem: need at least one node");
    }
    virtual ~Problem() = default;

    virtual ProblemId id() const = 0;
    virtual std::string metric_name() const = 0;
    virtual std::vector<Index> observation_dims() const = 0;
    virtual std::vector<double> bounds() const = 0;
    virtual std::vector<std::string> constraint_names() const = 0;
    /// X_i, identical for every node here.
    virtual FeasibleSet node_set() const = 0;

    /// Per-sample utility u (S x 1).
    virtual Var utility(Tape& tape, const Matrix& obs, const Var& x) const = 0;
    /// Per-sample constraint values g_k (S x K).
    virtual Var constraints(Tape& tape, const Matrix& obs, const Var& x) const = 0;

    virtual double utility_of(std::span<const double> a, std::span<const double> x) const = 0;
    virtual std::vector<double> constraints_of(std::span<const double> a,
                                               std::span<const double> x) const = 0;

    std::size_t num_nodes() const { return n_; }
    std::vector<Index> decision_dims() const { return std::vector<Index>(n_, 1); }
    Index observation_size() const {
        Index s = 0;
        for (Index d : observation_dims()) s += d;
        return s;
    }
    Index decision_size() const { return Index(n_); }
    std::size_t num_constraints() const { return bounds().size(); }
    FeasibleSet feasible_set() const {
        std::vector<FeasibleSet> parts(n_, node_set());
        return FeasibleSet::product(parts);
    }

    virtual Matrix sample(Index count, Rng& rng) const {
        if (count < 1) throw std::invalid_argument("sample: count must be >= 1");
        return exponential_gains(count, observation_size(), rng);
    }

    /// Splits one observation row into the local observations a_i.
    std::vector<std::vector<double>> observation_partition(std::span<const double> a) const {
        auto dims = observation_dims();
        std::vector<std::vector<double>> parts;
        for (std::size_t i = 0; i < n_; ++i) parts.push_back(mask_node_output(a, i, dims));
        return parts;
    }

protected:
    std::size_t n_;
};

inline Matrix sample_channels(const Problem& problem, Index count, Rng& rng) {
    return problem.sample(count, rng);
}

/// Cognitive multiple-access channel: maximize E[log(1 + sum h_i p_i)] under
/// average power budgets E[p_i] <= P and an average interference-temperature
/// cap E[sum g_i p_i] <= Gamma, p >= 0.
class CmacProblem final : public Problem {
public:
    CmacProblem(std::size_t n, double power, double gamma) : Problem(n), power_(power), gamma_(gamma) {
        if (!(power > 0) || !(gamma > 0)) throw std::invalid_argument("CmacProblem: P and Gamma must be > 0");
    }

    ProblemId id() const override { return ProblemId::p3; }
    std::string metric_name() const override { return "sum_capacity"; }
    double power() const { return power_; }
    double gamma() const { return gamma_; }

    std::vector<Index> observation_dims() const override { return std::vector<Index>(n_, 2); }
    std::vector<double> bounds() const override {
        std::vector<double> b(n_, power_);
        b.push_back(gamma_);
        return b;
    }
    std::vector<std::string> constraint_names() const override {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < n_; ++i) names.push_back("power" + std::to_string(i + 1));
        names.push_back("interference");
        return names;
    }
    FeasibleSet node_set() const override { return FeasibleSet::nonneg(1); }

    Var utility(Tape& tape, const Matrix& obs, const Var& x) const override {
        Var h = tape.constant(gains(obs, 0));
        return log1p(sum(mul(h, x), 1));
    }

    Var constraints(Tape& tape, const Matrix& obs, const Var& x) const override {
        Var g = tape.constant(gains(obs, 1));
        return concat_cols({x, sum(mul(g, x), 1)});
    }

    double utility_of(std::span<const double> a, std::span<const double> x) const override {
        auto c = cmac_channel_from_row(a);
        return cmac_cost(c.h, c.g, x);
    }
    std::vector<double> constraints_of(std::span<const double> a, std::span<const double> x) const override {
        auto c = cmac_channel_from_row(a);
        return cmac_constraints(c.h, c.g, x);
    }

private:
    /// Columns h_i (which = 0) or g_i (which = 1) of a batch.
    Matrix gains(const Matrix& obs, Index which) const {
        Matrix out(obs.rows(), Index(n_));
        for (Index i = 0; i < Index(n_); ++i) out.col(i) = obs.col(2 * i + which);
        return out;
    }

    double power_;
    double gamma_;
};

enum class IfcObjective { sum_rate, min_rate };

/// Interference channel power control: maximize the expected sum rate (or the
/// expected minimum rate) under E[p_i] <= P_A and 0 <= p_i <= P_P.
class IfcProblem final : public Problem {
public:
    IfcProblem(std::size_t n, double avg_power, double peak_power, IfcObjective objective)
        : Problem(n), avg_(avg_power), peak_(peak_power), objective_(objective) {
        if (!(avg_power > 0) || !(peak_power >= avg_power))
            throw std::invalid_argument("IfcProblem: need 0 < P_A <= P_P");
        const Index N = Index(n);
        spread_ = Matrix::Zero(N, N * N);
        collect_ = Matrix::Zero(N * N, N);
        for (Index i = 0; i < N; ++i)
            for (Index j = 0; j < N; ++j) {
                spread_(j, i * N + j) = 1.0;
                collect_(i * N + j, i) = 1.0;
            }
    }

    ProblemId id() const override { return objective_ == IfcObjective::sum_rate ? ProblemId::p4 : ProblemId::p5; }
    std::string metric_name() const override {
        return objective_ == IfcObjective::sum_rate ? "sum_rate" : "min_rate";
    }
    double avg_power() const { return avg_; }
    double peak_power() const { return peak_; }
    IfcObjective objective() const { return objective_; }

    std::vector<Index> observation_dims() const override { return std::vector<Index>(n_, Index(n_)); }
    std::vector<double> bounds() const override { return std::vector<double>(n_, avg_); }
    std::vector<std::string> constraint_names() const override {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < n_; ++i) names.push_back("avg_power" + std::to_string(i + 1));
        return names;
    }
    FeasibleSet node_set() const override { return FeasibleSet::box(1, 0.0, peak_); }

    /// Per-link rates (S x N). Received power at receiver i is
    /// sum_j h_ji p_j = ((p spread) .* obs) collect.
    Var rates(Tape& tape, const Matrix& obs, const Var& x) const {
        const Index N = Index(n_);
        Matrix direct(obs.rows(), N);
        for (Index i = 0; i < N; ++i) direct.col(i) = obs.col(i * N + i);
        Var received = matmul(mul(matmul(x, tape.constant(spread_)), tape.constant(obs)), tape.constant(collect_));
        Var signal = mul(tape.constant(direct), x);
        Var interference = shift(sub(received, signal), 1.0);
        return log1p(div(signal, interference));
    }

    Var utility(Tape& tape, const Matrix& obs, const Var& x) const override {
        Var r = rates(tape, obs, x);
        return objective_ == IfcObjective::sum_rate ? sum(r, 1) : min(r, 1);
    }

    Var constraints(Tape&, const Matrix&, const Var& x) const override { return x; }

    double utility_of(std::span<const double> a, std::span<const double> x) const override {
        auto H = ifc_channel_from_row(a);
        return objective_ == IfcObjective::sum_rate ? ifc_sum_cost(H, x) : ifc_minrate_cost(H, x);
    }
    std::vector<double> constraints_of(std::span<const double>, std::span<const double> x) const override {
        return {x.begin(), x.end()};
    }

private:
    double avg_;
    double peak_;
    IfcObjective objective_;
    Matrix spread_;   // N x N^2, spreads p_j to every receiver block
    Matrix collect_;  // N^2 x N, sums each receiver block
};

/// Builds the problem for an operating point: SNR sets P (P3) or P_A (P4/P5).
inline std::unique_ptr<Problem> make_problem(ProblemId id, std::size_t n, const SweepPoint& pt) {
    pt.validate();
    switch (id) {
        case ProblemId::p3: return std::make_unique<CmacProblem>(n, pt.power(), pt.gamma);
        case ProblemId::p4:
            return std::make_unique<IfcProblem>(n, pt.avg_power(), pt.peak_power(), IfcObjective::sum_rate);
        case ProblemId::p5:
            return std::make_unique<IfcProblem>(n, pt.avg_power(), pt.peak_power(), IfcObjective::min_rate);
    }
    throw std::invalid_argument("unknown problem id");
}

}  // namespace pdnet
