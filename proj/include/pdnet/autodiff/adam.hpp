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
#include <vector>

#include "pdnet/autodiff/tensor.hpp"

namespace pdnet {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment accumulators, one pair per parameter tensor.
class AdamState {
public:
    AdamState() = default;
    explicit AdamState(AdamOptions opts) : opts_(opts) {}

    const AdamOptions& options() const { return opts_; }
    AdamOptions& options() { return opts_; }
    long step() const { return step_; }
    const std::vector<Matrix>& first_moments() const { return m_; }
    const std::vector<Matrix>& second_moments() const { return v_; }

    /// One bias-corrected Adam update of every tensor from its gradient
    /// buffer. Gradients are left untouched.
    void apply(std::span<Tensor* const> params) {
        if (opts_.lr <= 0) throw std::invalid_argument("adam: learning rate must be positive");
        for (const Tensor* p : params)
            if (!p->grad().allFinite())
                throw numeric_error("adam: non-finite gradient in parameter '" + p->name() + "'");
        if (m_.empty()) {
            for (const Tensor* p : params) {
                m_.push_back(Matrix::Zero(p->rows(), p->cols()));
                v_.push_back(Matrix::Zero(p->rows(), p->cols()));
            }
        }
        if (m_.size() != params.size()) throw dimension_error("adam: parameter list changed size");
        ++step_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, double(step_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, double(step_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Tensor& p = *params[k];
            const Matrix& g = p.grad();
            if (g.rows() != m_[k].rows() || g.cols() != m_[k].cols())
                throw dimension_error("adam: shape of '" + p.name() + "' changed");
            m_[k] = opts_.beta1 * m_[k] + (1.0 - opts_.beta1) * g;
            v_[k] = opts_.beta2 * v_[k] + (1.0 - opts_.beta2) * g.cwiseAbs2();
            p.value().array() -= opts_.lr * (m_[k].array() / bc1) /
                                 ((v_[k].array() / bc2).sqrt() + opts_.eps);
        }
    }

private:
    AdamOptions opts_;
    std::vector<Matrix> m_, v_;
    long step_ = 0;
};

inline void adam_step(std::span<Tensor* const> params, AdamState& state) { state.apply(params); }

}  // namespace pdnet
