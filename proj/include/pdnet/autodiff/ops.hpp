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

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdnet/autodiff/tape.hpp"

// Differentiable primitives. Binary element-wise ops broadcast 2-D operands
// numpy-style: a dimension of size one stretches to match the other operand.

namespace pdnet {

namespace detail {

inline void check_finite(const Matrix& m, std::string_view op) {
    if (!m.allFinite())
        throw numeric_error(std::string(op) + ": non-finite value in output");
}

inline Tape& same_tape(const Var& a, const Var& b, std::string_view op) {
    if (!a.valid() || a.tape() != b.tape())
        throw std::logic_error(std::string(op) + ": operands on different tapes");
    return *a.tape();
}

inline Index broadcast_dim(Index a, Index b, bool& ok) {
    if (a == b) return a;
    if (a == 1) return b;
    if (b == 1) return a;
    ok = false;
    return 0;
}

inline std::pair<Index, Index> broadcast_shape(const Matrix& a, const Matrix& b,
                                               std::string_view op) {
    bool ok = true;
    Index r = broadcast_dim(a.rows(), b.rows(), ok);
    Index c = broadcast_dim(a.cols(), b.cols(), ok);
    if (!ok)
        throw dimension_error(std::string(op) + ": shapes " + shape_string(a) + " and " +
                              shape_string(b) + " do not broadcast");
    return {r, c};
}

inline Matrix expand(const Matrix& m, Index rows, Index cols) {
    if (m.rows() == rows && m.cols() == cols) return m;
    return m.replicate(rows / m.rows(), cols / m.cols());
}

/// Sums `g` over the axes along which an operand of shape rows x cols was
/// stretched.
inline Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
    if (rows == 1) return g.colwise().sum();
    return g.rowwise().sum();
}

template <class Fwd, class DA, class DB>
Var binary(std::string_view op, const Var& a, const Var& b, Fwd fwd, DA da, DB db) {
    Tape& t = same_tape(a, b, op);
    auto [r, c] = broadcast_shape(a.value(), b.value(), op);
    Matrix ea = expand(a.value(), r, c);
    Matrix eb = expand(b.value(), r, c);
    Matrix out = fwd(ea, eb);
    check_finite(out, op);
    const int ia = a.id(), ib = b.id();
    return t.record(op, std::move(out), {ia, ib}, [ia, ib, r, c, da, db](Tape& tp, int self) {
        const Matrix& g = tp.adjoint(self);
        Matrix ea = expand(tp.value(ia), r, c);
        Matrix eb = expand(tp.value(ib), r, c);
        if (tp.needs_grad(ia)) {
            const Matrix& va = tp.value(ia);
            tp.adjoint(ia) += reduce_to(da(g, ea, eb), va.rows(), va.cols());
        }
        if (tp.needs_grad(ib)) {
            const Matrix& vb = tp.value(ib);
            tp.adjoint(ib) += reduce_to(db(g, ea, eb), vb.rows(), vb.cols());
        }
    });
}

/// Element-wise unary map; `dfdx(x, y)` returns the local derivative given
/// input and output arrays.
template <class Fwd, class Deriv>
Var unary(std::string_view op, const Var& x, Fwd fwd, Deriv dfdx) {
    Tape& t = *x.tape();
    Matrix out = fwd(x.value());
    check_finite(out, op);
    const int ix = x.id();
    return t.record(op, std::move(out), {ix}, [ix, dfdx](Tape& tp, int self) {
        tp.adjoint(ix).array() += tp.adjoint(self).array() * dfdx(tp.value(ix), tp.value(self)).array();
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// a (m x k) times b (k x n).
inline Var matmul(const Var& a, const Var& b) {
    Tape& t = detail::same_tape(a, b, "matmul");
    if (a.cols() != b.rows())
        throw dimension_error("matmul: shape mismatch " + shape_string(a.value()) + " x " +
                              shape_string(b.value()));
    Matrix out = a.value() * b.value();
    detail::check_finite(out, "matmul");
    const int ia = a.id(), ib = b.id();
    return t.record("matmul", std::move(out), {ia, ib}, [ia, ib](Tape& tp, int self) {
        const Matrix& g = tp.adjoint(self);
        if (tp.needs_grad(ia)) tp.adjoint(ia).noalias() += g * tp.value(ib).transpose();
        if (tp.needs_grad(ib)) tp.adjoint(ib).noalias() += tp.value(ia).transpose() * g;
    });
}

// ---------------------------------------------------------------------------
// Element-wise
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    return detail::binary(
        "add", a, b, [](const Matrix& x, const Matrix& y) -> Matrix { return x + y; },
        [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; },
        [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; });
}

inline Var sub(const Var& a, const Var& b) {
    return detail::binary(
        "sub", a, b, [](const Matrix& x, const Matrix& y) -> Matrix { return x - y; },
        [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; },
        [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return -g; });
}

inline Var mul(const Var& a, const Var& b) {
    return detail::binary(
        "mul", a, b,
        [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseProduct(y); },
        [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix { return g.cwiseProduct(y); },
        [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix { return g.cwiseProduct(x); });
}

inline Var div(const Var& a, const Var& b) {
    if ((b.value().array() == 0.0).any()) throw numeric_error("div: zero denominator");
    return detail::binary(
        "div", a, b,
        [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseQuotient(y); },
        [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix { return g.cwiseQuotient(y); },
        [](const Matrix& g, const Matrix& x, const Matrix& y) -> Matrix {
            return -(g.array() * x.array() / y.array().square()).matrix();
        });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

/// k * x for a constant k.
inline Var scale(const Var& x, double k) {
    return detail::unary(
        "scale", x, [k](const Matrix& v) -> Matrix { return k * v; },
        [k](const Matrix& v, const Matrix&) -> Matrix { return Matrix::Constant(v.rows(), v.cols(), k); });
}

inline Var neg(const Var& x) { return scale(x, -1.0); }
inline Var operator-(const Var& x) { return neg(x); }

/// x + k for a constant k.
inline Var shift(const Var& x, double k) {
    return detail::unary(
        "shift", x, [k](const Matrix& v) -> Matrix { return (v.array() + k).matrix(); },
        [](const Matrix& v, const Matrix&) -> Matrix { return Matrix::Ones(v.rows(), v.cols()); });
}

inline Var log1p(const Var& x) {
    if ((x.value().array() <= -1.0).any()) throw numeric_error("log1p: argument <= -1");
    return detail::unary(
        "log1p", x, [](const Matrix& v) -> Matrix { return v.unaryExpr([](double e) { return std::log1p(e); }); },
        [](const Matrix& v, const Matrix&) -> Matrix { return (1.0 / (1.0 + v.array())).matrix(); });
}

inline Var exp(const Var& x) {
    return detail::unary(
        "exp", x, [](const Matrix& v) -> Matrix { return v.array().exp().matrix(); },
        [](const Matrix&, const Matrix& y) -> Matrix { return y; });
}

inline Var relu(const Var& x) {
    return detail::unary(
        "relu", x, [](const Matrix& v) -> Matrix { return v.cwiseMax(0.0); },
        [](const Matrix& v, const Matrix&) -> Matrix { return (v.array() > 0.0).cast<double>().matrix(); });
}

/// Projection onto the nonnegative orthant, (x)_+. Same map as relu; kept as
/// a separate primitive so graphs read as projections where they are ones.
inline Var max0(const Var& x) {
    return detail::unary(
        "max0", x, [](const Matrix& v) -> Matrix { return v.cwiseMax(0.0); },
        [](const Matrix& v, const Matrix&) -> Matrix { return (v.array() > 0.0).cast<double>().matrix(); });
}

inline Var tanh(const Var& x) {
    return detail::unary(
        "tanh", x, [](const Matrix& v) -> Matrix { return v.array().tanh().matrix(); },
        [](const Matrix&, const Matrix& y) -> Matrix { return (1.0 - y.array().square()).matrix(); });
}

inline Var sigmoid(const Var& x) {
    return detail::unary(
        "sigmoid", x,
        [](const Matrix& v) -> Matrix {
            return v.unaryExpr([](double e) {
                return e >= 0 ? 1.0 / (1.0 + std::exp(-e)) : std::exp(e) / (1.0 + std::exp(e));
            });
        },
        [](const Matrix&, const Matrix& y) -> Matrix { return (y.array() * (1.0 - y.array())).matrix(); });
}

/// Element-wise clamp to [lo_j, hi_j] per column. The adjoint passes through
/// strictly inside the interval and is zero where the bound is active.
inline Var clamp(const Var& x, const RowVector& lo, const RowVector& hi) {
    if (lo.size() != x.cols() || hi.size() != x.cols())
        throw dimension_error("clamp: bounds length does not match " + shape_string(x.value()));
    Matrix out = x.value();
    for (Index r = 0; r < out.rows(); ++r)
        out.row(r) = out.row(r).cwiseMax(lo).cwiseMin(hi);
    const int ix = x.id();
    return x.tape()->record("clamp", std::move(out), {ix}, [ix, lo, hi](Tape& tp, int self) {
        const Matrix& v = tp.value(ix);
        const Matrix& g = tp.adjoint(self);
        Matrix& ax = tp.adjoint(ix);
        for (Index r = 0; r < v.rows(); ++r)
            for (Index c = 0; c < v.cols(); ++c)
                if (v(r, c) > lo(c) && v(r, c) < hi(c)) ax(r, c) += g(r, c);
    });
}

enum class Elementwise { add, sub, mul, div, log1p, exp, relu, tanh, sigmoid, max0 };

inline std::string_view to_string(Elementwise op) {
    switch (op) {
        case Elementwise::add: return "add";
        case Elementwise::sub: return "sub";
        case Elementwise::mul: return "mul";
        case Elementwise::div: return "div";
        case Elementwise::log1p: return "log1p";
        case Elementwise::exp: return "exp";
        case Elementwise::relu: return "relu";
        case Elementwise::tanh: return "tanh";
        case Elementwise::sigmoid: return "sigmoid";
        case Elementwise::max0: return "max0";
    }
    return "?";
}

inline bool is_binary(Elementwise op) {
    return op == Elementwise::add || op == Elementwise::sub || op == Elementwise::mul ||
           op == Elementwise::div;
}

/// Dispatches an element-wise primitive by tag.
inline Var elementwise(Elementwise op, std::span<const Var> args) {
    const std::size_t arity = is_binary(op) ? 2 : 1;
    if (args.size() != arity)
        throw std::invalid_argument(std::string(to_string(op)) + ": expected " +
                                    std::to_string(arity) + " operand(s)");
    switch (op) {
        case Elementwise::add: return add(args[0], args[1]);
        case Elementwise::sub: return sub(args[0], args[1]);
        case Elementwise::mul: return mul(args[0], args[1]);
        case Elementwise::div: return div(args[0], args[1]);
        case Elementwise::log1p: return log1p(args[0]);
        case Elementwise::exp: return exp(args[0]);
        case Elementwise::relu: return relu(args[0]);
        case Elementwise::tanh: return tanh(args[0]);
        case Elementwise::sigmoid: return sigmoid(args[0]);
        case Elementwise::max0: return max0(args[0]);
    }
    throw std::invalid_argument("unknown element-wise op");
}

// ---------------------------------------------------------------------------
// Reductions. axis 0 collapses rows (result 1 x cols), axis 1 collapses
// columns (result rows x 1), axis -1 collapses everything (1 x 1).
// ---------------------------------------------------------------------------

namespace detail {
inline void check_axis(const Matrix& v, int axis, std::string_view op) {
    if (axis < -1 || axis > 1) throw std::invalid_argument(std::string(op) + ": invalid axis");
    const bool empty = (axis == 0 && v.rows() == 0) || (axis == 1 && v.cols() == 0) ||
                       (axis == -1 && v.size() == 0);
    if (empty) throw dimension_error(std::string(op) + ": reduction over empty axis");
}
}  // namespace detail

inline Var sum(const Var& x, int axis = -1) {
    detail::check_axis(x.value(), axis, "sum");
    Matrix out;
    if (axis == 0) out = x.value().colwise().sum();
    else if (axis == 1) out = x.value().rowwise().sum();
    else out = Matrix::Constant(1, 1, x.value().sum());
    const int ix = x.id();
    return x.tape()->record("sum", std::move(out), {ix}, [ix](Tape& tp, int self) {
        const Matrix& v = tp.value(ix);
        tp.adjoint(ix) += detail::expand(tp.adjoint(self), v.rows(), v.cols());
    });
}

inline Var mean(const Var& x, int axis = -1) {
    detail::check_axis(x.value(), axis, "mean");
    const double n = axis == 0 ? double(x.rows()) : axis == 1 ? double(x.cols()) : double(x.value().size());
    return scale(sum(x, axis), 1.0 / n);
}

/// Minimum along an axis. The adjoint is routed to the arg-min entry; ties go
/// to the lowest index.
inline Var min(const Var& x, int axis = -1) {
    detail::check_axis(x.value(), axis, "min");
    const Matrix& v = x.value();
    std::vector<std::pair<Index, Index>> arg;
    Matrix out;
    auto argmin = [&v](Index r0, Index r1, Index c0, Index c1) {
        std::pair<Index, Index> best{r0, c0};
        for (Index r = r0; r < r1; ++r)
            for (Index c = c0; c < c1; ++c)
                if (v(r, c) < v(best.first, best.second)) best = {r, c};
        return best;
    };
    if (axis == 0) {
        out.resize(1, v.cols());
        for (Index c = 0; c < v.cols(); ++c) {
            arg.push_back(argmin(0, v.rows(), c, c + 1));
            out(0, c) = v(arg.back().first, arg.back().second);
        }
    } else if (axis == 1) {
        out.resize(v.rows(), 1);
        for (Index r = 0; r < v.rows(); ++r) {
            arg.push_back(argmin(r, r + 1, 0, v.cols()));
            out(r, 0) = v(arg.back().first, arg.back().second);
        }
    } else {
        out.resize(1, 1);
        arg.push_back(argmin(0, v.rows(), 0, v.cols()));
        out(0, 0) = v(arg[0].first, arg[0].second);
    }
    const int ix = x.id();
    return x.tape()->record("min", std::move(out), {ix}, [ix, arg = std::move(arg)](Tape& tp, int self) {
        const Matrix& g = tp.adjoint(self);
        Matrix& ax = tp.adjoint(ix);
        for (std::size_t k = 0; k < arg.size(); ++k)
            ax(arg[k].first, arg[k].second) += g.data()[k];
    });
}

enum class Reduce { sum, mean, min_over_axis };

inline Var reduce(Reduce op, const Var& x, int axis) {
    switch (op) {
        case Reduce::sum: return sum(x, axis);
        case Reduce::mean: return mean(x, axis);
        case Reduce::min_over_axis: return min(x, axis);
    }
    throw std::invalid_argument("unknown reduction");
}

// ---------------------------------------------------------------------------
// Column slicing and concatenation
// ---------------------------------------------------------------------------

inline Var slice_cols(const Var& x, Index begin, Index count) {
    if (begin < 0 || count < 0 || begin + count > x.cols())
        throw dimension_error("slice_cols: range [" + std::to_string(begin) + ", " +
                              std::to_string(begin + count) + ") outside " + shape_string(x.value()));
    Matrix out = x.value().middleCols(begin, count);
    const int ix = x.id();
    return x.tape()->record("slice_cols", std::move(out), {ix}, [ix, begin, count](Tape& tp, int self) {
        tp.adjoint(ix).middleCols(begin, count) += tp.adjoint(self);
    });
}

inline Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw dimension_error("concat_cols: nothing to concatenate");
    const Index rows = parts[0].rows();
    Index cols = 0;
    for (const Var& p : parts) {
        if (p.tape() != parts[0].tape()) throw std::logic_error("concat_cols: operands on different tapes");
        if (p.rows() != rows)
            throw dimension_error("concat_cols: row mismatch " + shape_string(parts[0].value()) +
                                  " vs " + shape_string(p.value()));
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<int> ids;
    std::vector<Index> offsets;
    Index off = 0;
    for (const Var& p : parts) {
        out.middleCols(off, p.cols()) = p.value();
        ids.push_back(p.id());
        offsets.push_back(off);
        off += p.cols();
    }
    std::vector<int> parents = ids;
    return parts[0].tape()->record("concat_cols", std::move(out), std::move(parents),
                                   [ids, offsets](Tape& tp, int self) {
                                       const Matrix& g = tp.adjoint(self);
                                       for (std::size_t k = 0; k < ids.size(); ++k) {
                                           if (!tp.needs_grad(ids[k])) continue;
                                           Matrix& a = tp.adjoint(ids[k]);
                                           a += g.middleCols(offsets[k], a.cols());
                                       }
                                   });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
    std::vector<Var> v(parts);
    return concat_cols(std::span<const Var>(v));
}

}  // namespace pdnet
