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

#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace pdnet {

/// Dense row-major storage used for every tensor. Rows index samples of a
/// mini-batch, columns index features.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Random stream used everywhere. Seeded explicitly; never from the clock.
using Rng = std::mt19937_64;

class dimension_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string shape_string(const Matrix& m) {
    std::ostringstream os;
    os << '[' << m.rows() << 'x' << m.cols() << ']';
    return os.str();
}

/// Mixes a base seed with a stream tag (splitmix64 finalizer) so that
/// independent consumers never share a stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// A named dense array with an optional gradient buffer.
///
/// Tracked tensors are trainable parameters: the tape accumulates adjoints
/// into grad() during backward. Untracked tensors carry no gradient.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Matrix value, bool tracked = false, std::string name = {})
        : value_(std::move(value)), name_(std::move(name)) {
        if (tracked) grad_ = Matrix::Zero(value_.rows(), value_.cols());
    }

    static Tensor zeros(Index rows, Index cols, bool tracked = false, std::string name = {}) {
        return Tensor(Matrix::Zero(rows, cols), tracked, std::move(name));
    }

    static Tensor constant(Index rows, Index cols, double v, bool tracked = false,
                           std::string name = {}) {
        return Tensor(Matrix::Constant(rows, cols, v), tracked, std::move(name));
    }

    std::vector<Index> shape() const { return {value_.rows(), value_.cols()}; }
    Index rows() const { return value_.rows(); }
    Index cols() const { return value_.cols(); }
    Index size() const { return value_.size(); }

    const Matrix& value() const { return value_; }
    Matrix& value() { return value_; }

    bool tracked() const { return grad_.has_value(); }

    const Matrix& grad() const {
        if (!grad_) throw std::logic_error("tensor '" + name_ + "' has no gradient");
        return *grad_;
    }
    Matrix& grad() {
        if (!grad_) throw std::logic_error("tensor '" + name_ + "' has no gradient");
        return *grad_;
    }

    void zero_grad() {
        if (grad_) grad_->setZero();
    }

    const std::string& name() const { return name_; }
    void set_name(std::string name) { name_ = std::move(name); }

private:
    Matrix value_;
    std::optional<Matrix> grad_;
    std::string name_;
};

}  // namespace pdnet
