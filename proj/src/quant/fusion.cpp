// Copyright 2026 The kdlab Authors
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

#include "kdlab/quant/fusion.hpp"

#include <cmath>

namespace kdlab::quant {

template <typename T>
std::vector<double> equalizing_scales(const numerics::Tensor<T>& w) {
    const std::size_t cols = w.cols();
    std::vector<double> norms(cols, 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            norms[c] += static_cast<double>(w.at(r, c)) * w.at(r, c);
        }
    }
    double target = 0.0;
    for (auto& n : norms) {
        n = std::sqrt(n);
        target += n;
    }
    target /= static_cast<double>(cols);
    std::vector<double> s(cols, 1.0);
    for (std::size_t c = 0; c < cols; ++c) {
        if (norms[c] > 0.0) s[c] = target / norms[c];
    }
    return s;
}

namespace {

template <typename T>
void fuse(numerics::Tensor<T>& w, numerics::Tensor<T>& gain) {
    const auto s = equalizing_scales(w);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t c = 0; c < w.cols(); ++c) {
            w.at(r, c) = static_cast<T>(w.at(r, c) * s[c]);
        }
    }
    for (std::size_t c = 0; c < gain.size(); ++c) {
        gain[c] = static_cast<T>(gain[c] / s[c]);
    }
}

}  // namespace

template <typename T>
model::ModelParams<T> fuse_norms(const model::ModelParams<T>& params) {
    model::ModelParams<T> out = params;
    for (auto& layer : out.layers) {
        fuse(layer.qkv, layer.attn_norm);
        fuse(layer.up, layer.mlp_norm);
    }
    return out;
}

template std::vector<double> equalizing_scales(const numerics::Tensor<float>&);
template std::vector<double> equalizing_scales(const numerics::Tensor<double>&);
template model::ModelParams<float> fuse_norms(const model::ModelParams<float>&);
template model::ModelParams<double> fuse_norms(const model::ModelParams<double>&);

}  // namespace kdlab::quant
