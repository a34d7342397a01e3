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

#include <cassert>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdnet/autodiff/tensor.hpp"

namespace pdnet {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
public:
    Var() = default;

    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

    const Matrix& value() const;
    const Matrix& grad() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    double scalar() const;

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Wengert list for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, which is a topological order of the
/// graph, so backward() replays adjoint rules by walking the list in reverse.
/// A tape is single-use: build it, call backward() at most once, drop it.
class Tape {
public:
    using Backward = std::function<void(Tape&, int)>;

    Tape() { nodes_.reserve(64); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value) {
        Node n;
        n.op = "constant";
        n.value = std::move(value);
        return push(std::move(n));
    }

    /// Records a leaf bound to `t`. When `t` is tracked its gradient buffer
    /// receives the adjoint on backward().
    Var watch(Tensor& t) {
        Node n;
        n.op = "leaf";
        n.value = t.value();
        if (t.tracked()) {
            n.leaf = &t;
            n.needs_grad = true;
        }
        return push(std::move(n));
    }

    /// Records the result of a primitive. `back` is kept only if some parent
    /// participates in differentiation.
    Var record(std::string_view op, Matrix value, std::vector<int> parents, Backward back) {
        Node n;
        n.op = std::string(op);
        n.value = std::move(value);
        for (int p : parents) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
        n.parents = std::move(parents);
        if (n.needs_grad) n.backward = std::move(back);
        return push(std::move(n));
    }

    /// Seeds the adjoint of a 1x1 root with one and propagates to every
    /// reachable node, each visited exactly once.
    void backward(Var root) {
        if (root.tape_ != this) throw std::logic_error("backward: variable belongs to another tape");
        const Matrix& v = nodes_[root.id_].value;
        if (v.rows() != 1 || v.cols() != 1)
            throw dimension_error("backward: root must be 1x1, got " + shape_string(v));
        order_.clear();
        adjoint(root.id_).setOnes();
        for (int id = root.id_; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.needs_grad || !n.has_adjoint) continue;
            order_.push_back(id);
            if (n.backward) n.backward(*this, id);
            if (n.leaf) n.leaf->grad() += n.adjoint;
        }
    }

    const Matrix& value(int id) const { return nodes_[id].value; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    const std::string& op_name(int id) const { return nodes_[id].op; }
    const std::vector<int>& parents(int id) const { return nodes_[id].parents; }

    /// Adjoint buffer of node `id`, zero-initialised on first access.
    Matrix& adjoint(int id) {
        Node& n = nodes_[id];
        if (!n.has_adjoint) {
            n.adjoint = Matrix::Zero(n.value.rows(), n.value.cols());
            n.has_adjoint = true;
        }
        return n.adjoint;
    }

    const Matrix& adjoint_or_empty(int id) const {
        static const Matrix empty;
        return nodes_[id].has_adjoint ? nodes_[id].adjoint : empty;
    }

    /// Node ids visited by the last backward(), in visit order.
    const std::vector<int>& backward_order() const { return order_; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::string op;
        Matrix value;
        Matrix adjoint;
        bool has_adjoint = false;
        bool needs_grad = false;
        std::vector<int> parents;
        Backward backward;
        Tensor* leaf = nullptr;
    };

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var(this, static_cast<int>(nodes_.size()) - 1);
    }

    std::vector<Node> nodes_;
    std::vector<int> order_;
};

inline const Matrix& Var::value() const {
    assert(tape_);
    return tape_->value(id_);
}

inline const Matrix& Var::grad() const {
    assert(tape_);
    return tape_->adjoint_or_empty(id_);
}

inline double Var::scalar() const {
    const Matrix& v = value();
    if (v.size() != 1) throw dimension_error("scalar(): expected 1x1, got " + shape_string(v));
    return v(0, 0);
}

}  // namespace pdnet
