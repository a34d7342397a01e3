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
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pdnet/autodiff.hpp"

namespace pdnet {

/// Product of closed intervals [lo_j, hi_j], one per output coordinate.
/// hi_j may be +inf (the nonnegative orthant is lo = 0, hi = inf).
struct FeasibleSet {
    RowVector lo;
    RowVector hi;

    static FeasibleSet nonneg(Index dim) {
        return {RowVector::Zero(dim), RowVector::Constant(dim, std::numeric_limits<double>::infinity())};
    }
    static FeasibleSet box(Index dim, double lo, double hi) {
        if (!(lo <= hi)) throw std::invalid_argument("FeasibleSet::box: lo > hi");
        return {RowVector::Constant(dim, lo), RowVector::Constant(dim, hi)};
    }
    /// Concatenates per-node sets into the set of the stacked decision.
    static FeasibleSet product(std::span<const FeasibleSet> parts) {
        Index n = 0;
        for (const auto& p : parts) n += p.dim();
        FeasibleSet out{RowVector(n), RowVector(n)};
        Index off = 0;
        for (const auto& p : parts) {
            out.lo.segment(off, p.dim()) = p.lo;
            out.hi.segment(off, p.dim()) = p.hi;
            off += p.dim();
        }
        return out;
    }

    Index dim() const { return lo.size(); }
    bool is_nonneg() const {
        return (lo.array() == 0.0).all() && hi.array().isInf().all();
    }
    bool contains(std::span<const double> x) const {
        if (Index(x.size()) != dim()) return false;
        for (Index j = 0; j < dim(); ++j)
            if (!(x[j] >= lo(j) && x[j] <= hi(j))) return false;
        return true;
    }
};

/// Euclidean projection onto a product of intervals, i.e. clamping.
inline std::vector<double> project(const FeasibleSet& set, std::span<const double> u) {
    if (Index(u.size()) != set.dim())
        throw dimension_error("project: vector of length " + std::to_string(u.size()) +
                              " for a set of dimension " + std::to_string(set.dim()));
    std::vector<double> out(u.begin(), u.end());
    for (Index j = 0; j < set.dim(); ++j) out[j] = std::clamp(out[j], set.lo(j), set.hi(j));
    return out;
}

/// Offsets of each node's block inside a stacked vector.
inline std::vector<Index> block_offsets(std::span<const Index> dims) {
    std::vector<Index> off(dims.size() + 1, 0);
    for (std::size_t i = 0; i < dims.size(); ++i) off[i + 1] = off[i] + dims[i];
    return off;
}

/// Node i's block of a stacked vector (0-based node index).
inline std::vector<double> mask_node_output(std::span<const double> x, std::size_t node,
                                            std::span<const Index> dims) {
    if (node >= dims.size())
        throw std::out_of_range("mask_node_output: node " + std::to_string(node) + " of " +
                                std::to_string(dims.size()));
    auto off = block_offsets(dims);
    if (off.back() != Index(x.size()))
        throw dimension_error("mask_node_output: block sizes sum to " + std::to_string(off.back()) +
                              " but vector has length " + std::to_string(x.size()));
    return {x.begin() + off[node], x.begin() + off[node + 1]};
}

/// Batched variant: columns of node i's block.
inline Var mask_node_output(const Var& x, std::size_t node, std::span<const Index> dims) {
    if (node >= dims.size()) throw std::out_of_range("mask_node_output: node index out of range");
    auto off = block_offsets(dims);
    if (off.back() != x.cols()) throw dimension_error("mask_node_output: block sizes do not match width");
    return slice_cols(x, off[node], dims[node]);
}

enum class Activation { relu, tanh, sigmoid, linear, scaled_sigmoid, projection };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
        case Activation::linear: return "linear";
        case Activation::scaled_sigmoid: return "scaled_sigmoid";
        case Activation::projection: return "projection";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    for (auto a : {Activation::relu, Activation::tanh, Activation::sigmoid, Activation::linear,
                   Activation::scaled_sigmoid, Activation::projection})
        if (to_string(a) == s) return a;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

struct LayerSpec {
    Index out_dim = 1;
    Activation activation = Activation::relu;
    bool batch_norm = false;
    double bound = 1.0;                 // scaled_sigmoid: outputs in (0, bound)
    std::optional<FeasibleSet> set;     // projection: outputs in set

    static LayerSpec hidden(Index dim, bool bn = true) { return {dim, Activation::relu, bn, 1.0, {}}; }
    static LayerSpec scaled_sigmoid(Index dim, double bound) {
        return {dim, Activation::scaled_sigmoid, false, bound, {}};
    }
    static LayerSpec projection(FeasibleSet set) {
        Index d = set.dim();
        return {d, Activation::projection, false, 1.0, std::move(set)};
    }
    static LayerSpec output(Index dim, Activation act) { return {dim, act, false, 1.0, {}}; }

    void validate() const {
        if (out_dim < 1) throw std::invalid_argument("LayerSpec: out_dim must be >= 1");
        if (activation == Activation::scaled_sigmoid && !(bound > 0))
            throw std::invalid_argument("LayerSpec: scaled_sigmoid bound must be > 0");
        if (activation == Activation::projection) {
            if (!set || set->dim() != out_dim)
                throw std::invalid_argument("LayerSpec: projection needs a set of matching dimension");
            if ((set->lo.array() > set->hi.array()).any())
                throw std::invalid_argument("LayerSpec: projection set has lo > hi");
        }
    }
};

/// Applies a layer's activation on the tape.
inline Var activate(const Var& z, const LayerSpec& spec) {
    switch (spec.activation) {
        case Activation::relu: return relu(z);
        case Activation::tanh: return tanh(z);
        case Activation::sigmoid: return sigmoid(z);
        case Activation::linear: return z;
        case Activation::scaled_sigmoid: return scale(sigmoid(z), spec.bound);
        case Activation::projection:
            if (spec.set->is_nonneg()) return relu(z);
            return clamp(z, spec.set->lo, spec.set->hi);
    }
    throw std::invalid_argument("unknown activation");
}

/// Fully-connected network: each layer computes act(norm(u W + b)), with
/// normalization between the affine map and the activation when enabled.
class Mlp {
public:
    struct Layer {
        LayerSpec spec;
        Tensor weight;  // in x out
        Tensor bias;    // 1 x out
        Tensor gamma;   // 1 x out, batch-norm layers only
        Tensor beta;
        BatchNormStats stats;
    };

    Mlp() = default;

    Mlp(Index input_dim, std::vector<LayerSpec> specs, Rng& rng) : input_dim_(input_dim) {
        if (input_dim < 1) throw std::invalid_argument("Mlp: input dimension must be >= 1");
        if (specs.empty()) throw std::invalid_argument("Mlp: at least one layer required");
        Index in = input_dim;
        for (std::size_t r = 0; r < specs.size(); ++r) {
            specs[r].validate();
            Layer L;
            L.spec = specs[r];
            const std::string tag = "layer" + std::to_string(r);
            L.weight = xavier_init(in, L.spec.out_dim, rng, tag + ".weight");
            L.bias = bias_init(L.spec.out_dim, tag + ".bias");
            if (L.spec.batch_norm) {
                L.gamma = Tensor::constant(1, L.spec.out_dim, 1.0, true, tag + ".gamma");
                L.beta = Tensor::constant(1, L.spec.out_dim, 0.0, true, tag + ".beta");
                L.stats = BatchNormStats(L.spec.out_dim);
            }
            layers_.push_back(std::move(L));
            in = specs[r].out_dim;
        }
    }

    Index input_dim() const { return input_dim_; }
    Index output_dim() const { return layers_.empty() ? 0 : layers_.back().spec.out_dim; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }

    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        for (auto& L : layers_) {
            out.push_back(&L.weight);
            out.push_back(&L.bias);
            if (L.spec.batch_norm) {
                out.push_back(&L.gamma);
                out.push_back(&L.beta);
            }
        }
        return out;
    }

    Index parameter_count() const {
        Index n = 0;
        for (const auto& L : layers_) {
            n += L.weight.size() + L.bias.size();
            if (L.spec.batch_norm) n += L.gamma.size() + L.beta.size();
        }
        return n;
    }

    Var forward(Tape& tape, const Var& x, Mode mode) {
        if (x.cols() != input_dim_)
            throw dimension_error("Mlp::forward: input " + shape_string(x.value()) + " but network expects " +
                                  std::to_string(input_dim_) + " columns");
        if (!x.value().allFinite()) throw numeric_error("Mlp::forward: non-finite input");
        Var u = x;
        for (auto& L : layers_) {
            Var z = add(matmul(u, tape.watch(L.weight)), tape.watch(L.bias));
            if (L.spec.batch_norm)
                z = batch_norm(z, tape.watch(L.gamma), tape.watch(L.beta), mode, L.stats);
            u = activate(z, L.spec);
        }
        return u;
    }

    /// Inference convenience: evaluates without recording gradients.
    Matrix predict(const Matrix& x, Mode mode = Mode::eval) {
        Tape tape;
        return forward(tape, tape.constant(x), mode).value();
    }

    void save(std::ostream& os) const {
        os << "mlp " << input_dim_ << ' ' << layers_.size() << '\n';
        os << std::setprecision(17);
        for (const auto& L : layers_) {
            os << "layer " << L.spec.out_dim << ' ' << to_string(L.spec.activation) << ' '
               << (L.spec.batch_norm ? 1 : 0) << ' ' << L.spec.bound << '\n';
            if (L.spec.activation == Activation::projection) {
                write_row(os, "set_lo", L.spec.set->lo);
                write_row(os, "set_hi", L.spec.set->hi);
            }
            write_matrix(os, "weight", L.weight.value());
            write_matrix(os, "bias", L.bias.value());
            if (L.spec.batch_norm) {
                write_matrix(os, "gamma", L.gamma.value());
                write_matrix(os, "beta", L.beta.value());
                write_row(os, "running_mean", L.stats.running_mean);
                write_row(os, "running_var", L.stats.running_var);
            }
        }
    }

    static Mlp load(std::istream& is) {
        Mlp net;
        std::size_t nlayers = 0;
        expect(is, "mlp");
        is >> net.input_dim_ >> nlayers;
        Index in = net.input_dim_;
        for (std::size_t r = 0; r < nlayers; ++r) {
            Layer L;
            std::string act;
            int bn = 0;
            expect(is, "layer");
            is >> L.spec.out_dim >> act >> bn >> L.spec.bound;
            if (!is) throw std::runtime_error("Mlp::load: malformed layer header");
            L.spec.activation = activation_from_string(act);
            L.spec.batch_norm = bn != 0;
            if (L.spec.activation == Activation::projection) {
                FeasibleSet s{read_row(is, "set_lo", L.spec.out_dim), read_row(is, "set_hi", L.spec.out_dim)};
                L.spec.set = std::move(s);
            }
            L.spec.validate();
            const std::string tag = "layer" + std::to_string(r);
            L.weight = Tensor(read_matrix(is, "weight", in, L.spec.out_dim), true, tag + ".weight");
            L.bias = Tensor(read_matrix(is, "bias", 1, L.spec.out_dim), true, tag + ".bias");
            if (L.spec.batch_norm) {
                L.gamma = Tensor(read_matrix(is, "gamma", 1, L.spec.out_dim), true, tag + ".gamma");
                L.beta = Tensor(read_matrix(is, "beta", 1, L.spec.out_dim), true, tag + ".beta");
                L.stats = BatchNormStats(L.spec.out_dim);
                L.stats.running_mean = read_row(is, "running_mean", L.spec.out_dim);
                L.stats.running_var = read_row(is, "running_var", L.spec.out_dim);
            }
            net.layers_.push_back(std::move(L));
            in = net.layers_.back().spec.out_dim;
        }
        return net;
    }

private:
    static void expect(std::istream& is, const std::string& word) {
        std::string w;
        is >> w;
        if (w != word) throw std::runtime_error("checkpoint: expected '" + word + "', found '" + w + "'");
    }
    static void write_matrix(std::ostream& os, const char* tag, const Matrix& m) {
        os << tag << ' ' << m.rows() << ' ' << m.cols();
        for (Index k = 0; k < m.size(); ++k) os << ' ' << m.data()[k];
        os << '\n';
    }
    static void write_row(std::ostream& os, const char* tag, const RowVector& v) {
        os << tag << ' ' << v.size();
        for (Index k = 0; k < v.size(); ++k) os << ' ' << v(k);
        os << '\n';
    }
    static double read_double(std::istream& is) {
        std::string tok;
        is >> tok;
        if (!is) throw std::runtime_error("checkpoint: truncated data");
        return std::stod(tok);  // accepts inf
    }
    static Matrix read_matrix(std::istream& is, const std::string& tag, Index rows, Index cols) {
        expect(is, tag);
        Index r = 0, c = 0;
        is >> r >> c;
        if (r != rows || c != cols)
            throw dimension_error("checkpoint: " + tag + " has shape [" + std::to_string(r) + "x" +
                                  std::to_string(c) + "], expected [" + std::to_string(rows) + "x" +
                                  std::to_string(cols) + "]");
        Matrix m(r, c);
        for (Index k = 0; k < m.size(); ++k) m.data()[k] = read_double(is);
        return m;
    }
    static RowVector read_row(std::istream& is, const std::string& tag, Index n) {
        expect(is, tag);
        Index k = 0;
        is >> k;
        if (k != n) throw dimension_error("checkpoint: " + tag + " has wrong length");
        RowVector v(n);
        for (Index j = 0; j < n; ++j) v(j) = read_double(is);
        return v;
    }

    Index input_dim_ = 0;
    std::vector<Layer> layers_;
};

}  // namespace pdnet
