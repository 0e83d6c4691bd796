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

#include "kdlab/model/params.hpp"

#include <cmath>

namespace kdlab::model {

template <typename T>
ModelParams<T> allocate_params(const ModelConfig& config) {
    config.validate();
    using numerics::Shape;
    ModelParams<T> p;
    p.config = config;
    const std::size_t d = config.dim;
    p.embedding = Tensor<T>(Shape{config.vocab, d});
    for (std::size_t l = 0; l < config.layers; ++l) {
        p.layers.push_back(LayerParams<T>{
            Tensor<T>(Shape{d}, T{1}), Tensor<T>(Shape{config.qkv_rows(), d}),
            Tensor<T>(Shape{d, d}), Tensor<T>(Shape{d}, T{1}),
            Tensor<T>(Shape{config.mlp_dim, d}), Tensor<T>(Shape{d, config.mlp_dim})});
    }
    p.final_norm = Tensor<T>(Shape{d}, T{1});
    if (!config.tied_embeddings) {
        p.untied = Tensor<T>(Shape{config.vocab, d});
    }
    return p;
}

template <typename T>
ModelParams<T> build_model(const ModelConfig& config, std::uint64_t seed) {
    ModelParams<T> p = allocate_params<T>(config);
    const double base = 1.0 / std::sqrt(static_cast<double>(config.dim));
    const double residual =
        config.layers > 0 ? base / std::sqrt(2.0 * static_cast<double>(config.layers)) : base;
    std::uint64_t stream = 0;
    auto init = [&](Tensor<T>& t, double stddev) {
        Rng rng(derive_seed(seed, stream++));
        for (T& v : t.values()) {
            v = static_cast<T>(rng.normal(0.0, stddev));
        }
    };
    init(p.embedding, base);
    for (auto& layer : p.layers) {
        init(layer.qkv, base);
        init(layer.attn_out, residual);
        init(layer.up, base);
        init(layer.down, residual);
    }
    if (p.untied) {
        init(*p.untied, base);
    }
    return p;
}

template <typename T>
bool params_bit_equal(const ModelParams<T>& a, const ModelParams<T>& b) {
    if (!(a.config == b.config)) {
        return false;
    }
    const auto ta = a.tensors();
    const auto tb = b.tensors();
    if (ta.size() != tb.size()) {
        return false;
    }
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (!numerics::bit_equal(*ta[i], *tb[i])) {
            return false;
        }
    }
    return true;
}

template ModelParams<float> allocate_params<float>(const ModelConfig&);
template ModelParams<double> allocate_params<double>(const ModelConfig&);
template ModelParams<float> build_model<float>(const ModelConfig&, std::uint64_t);
template ModelParams<double> build_model<double>(const ModelConfig&, std::uint64_t);
template bool params_bit_equal<float>(const ModelParams<float>&, const ModelParams<float>&);
template bool params_bit_equal<double>(const ModelParams<double>&, const ModelParams<double>&);

}  // namespace kdlab::model
