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
#include <random>
#include <string>

#include "pdnet/autodiff/tensor.hpp"

namespace pdnet {

inline constexpr double kInitialBias = 0.01;

/// Weight matrix (fan_in x fan_out) with i.i.d. N(0, 1/fan_in) entries.
inline Tensor xavier_init(Index fan_in, Index fan_out, Rng& rng, std::string name = "weight") {
    if (fan_in < 1) throw std::invalid_argument("xavier_init: fan_in must be >= 1");
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(fan_in)));
    Matrix w(fan_in, fan_out);
    for (Index k = 0; k < w.size(); ++k) w.data()[k] = normal(rng);
    return Tensor(std::move(w), true, std::move(name));
}

inline Tensor bias_init(Index dim, std::string name = "bias") {
    return Tensor::constant(1, dim, kInitialBias, true, std::move(name));
}

}  // namespace pdnet
