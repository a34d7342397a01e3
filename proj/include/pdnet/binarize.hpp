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
#include <random>

#include "pdnet/autodiff.hpp"

namespace pdnet {

/// v = v_hat + q with v bipolar; q is the quantization noise.
struct BinarizerOutput {
    Matrix v;
    Matrix v_hat;
    Matrix q;
};

inline constexpr double kBinarizerSlack = 1e-12;

namespace detail {
inline Matrix checked_unit_box(const Matrix& v_hat) {
    for (Index k = 0; k < v_hat.size(); ++k) {
        const double e = v_hat.data()[k];
        if (!(e >= -1.0 - kBinarizerSlack && e <= 1.0 + kBinarizerSlack))
            throw std::domain_error("binarize: entry " + std::to_string(e) + " outside [-1, 1]");
    }
    return v_hat.cwiseMax(-1.0).cwiseMin(1.0);
}
}  // namespace detail

/// Deterministic quantization: sign(v_hat) with sign(0) = +1.
inline Matrix binarize_eval(const Matrix& v_hat) {
    Matrix x = detail::checked_unit_box(v_hat);
    return x.unaryExpr([](double e) { return e >= 0.0 ? 1.0 : -1.0; });
}

/// The backward rule: the upstream gradient reaches v_hat unchanged, since
/// E[v | v_hat] = v_hat.
inline Matrix binarize_backward(const Matrix& upstream) { return upstream; }

/// Stochastic binarization layer. Entry l becomes +1 with probability
/// (1 + v_hat_l) / 2 and -1 otherwise, independently across entries, so the
/// noise q = v - v_hat has zero mean.
///
/// Each instance owns its random stream.
class StochasticBinarizer {
public:
    StochasticBinarizer() = default;
    explicit StochasticBinarizer(std::uint64_t seed) : rng_(seed) {}

    BinarizerOutput sample(const Matrix& v_hat) {
        BinarizerOutput out;
        out.v_hat = detail::checked_unit_box(v_hat);
        out.v.resize(v_hat.rows(), v_hat.cols());
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (Index k = 0; k < out.v.size(); ++k) {
            const double p_plus = 0.5 * (1.0 + out.v_hat.data()[k]);
            out.v.data()[k] = unif(rng_) < p_plus ? 1.0 : -1.0;
        }
        out.q = out.v - out.v_hat;
        return out;
    }

    /// Records the layer on a tape. The forward value is the bipolar sample
    /// (or sign(v_hat) when `stochastic` is false); the adjoint passes
    /// straight through to v_hat.
    Var forward(const Var& v_hat, bool stochastic) {
        Matrix v = stochastic ? sample(v_hat.value()).v : binarize_eval(v_hat.value());
        const int id = v_hat.id();
        return v_hat.tape()->record("binarize", std::move(v), {id}, [id](Tape& tp, int self) {
            tp.adjoint(id) += binarize_backward(tp.adjoint(self));
        });
    }

    Rng& rng() { return rng_; }

private:
    Rng rng_{0};
};

}  // namespace pdnet
