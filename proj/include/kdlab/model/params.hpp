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

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kdlab/model/config.hpp"
#include "kdlab/numerics/tensor.hpp"

namespace kdlab::model {

using numerics::Tensor;

template <typename T>
struct LayerParams {
    Tensor<T> attn_norm;  // [dim]
    Tensor<T> qkv;        // [dim + 2*kv_dim, dim]; rows are Q, then K, then V
    Tensor<T> attn_out;   // [dim, dim]
    Tensor<T> mlp_norm;   // [dim]
    Tensor<T> up;         // [mlp_dim, dim]
    Tensor<T> down;       // [dim, mlp_dim]
};

/// Parameter tensors of a model. With tied embeddings there is no separate
/// head tensor: `head()` returns the embedding itself, so writes through one
/// are visible through the other.
template <typename T>
class ModelParams {
public:
    ModelConfig config;
    Tensor<T> embedding;  // [vocab, dim]
    std::vector<LayerParams<T>> layers;
    Tensor<T> final_norm;             // [dim]
    std::optional<Tensor<T>> untied;  // [vocab, dim] when not tied

    Tensor<T>& head() { return untied ? *untied : embedding; }
    const Tensor<T>& head() const { return untied ? *untied : embedding; }

    /// Calls f(name, tensor) for each distinct tensor in declaration order.
    template <typename F>
    void visit(F&& f) {
        f(std::string("embedding"), embedding);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";
            f(p + "attn_norm", layers[l].attn_norm);
            f(p + "qkv", layers[l].qkv);
            f(p + "attn_out", layers[l].attn_out);
            f(p + "mlp_norm", layers[l].mlp_norm);
            f(p + "up", layers[l].up);
            f(p + "down", layers[l].down);
        }
        f(std::string("final_norm"), final_norm);
        if (untied) {
            f(std::string("head"), *untied);
        }
    }

    template <typename F>
    void visit(F&& f) const {
        const_cast<ModelParams*>(this)->visit(
            [&](const std::string& name, Tensor<T>& t) { f(name, static_cast<const Tensor<T>&>(t)); });
    }

    std::vector<Tensor<T>*> tensors() {
        std::vector<Tensor<T>*> out;
        visit([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
        return out;
    }

    std::vector<const Tensor<T>*> tensors() const {
        std::vector<const Tensor<T>*> out;
        visit([&](const std::string&, const Tensor<T>& t) { out.push_back(&t); });
        return out;
    }

    std::uint64_t element_count() const {
        std::uint64_t n = 0;
        visit([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
        return n;
    }

    template <typename U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        out.config = config;
        out.embedding = embedding.template cast<U>();
        for (const auto& l : layers) {
            out.layers.push_back(LayerParams<U>{
                l.attn_norm.template cast<U>(), l.qkv.template cast<U>(),
                l.attn_out.template cast<U>(), l.mlp_norm.template cast<U>(),
                l.up.template cast<U>(), l.down.template cast<U>()});
        }
        out.final_norm = final_norm.template cast<U>();
        if (untied) {
            out.untied = untied->template cast<U>();
        }
        return out;
    }
};

/// Allocates every tensor for `config`: zeros, except norm gains which are 1.
template <typename T>
ModelParams<T> allocate_params(const ModelConfig& config);

/// Deterministic initialization: N(0, 1/dim) for input-side projections and
/// embeddings, additionally scaled by 1/sqrt(2*layers) on residual outputs
/// (attention output and MLP down projection); norm gains are 1.
template <typename T>
ModelParams<T> build_model(const ModelConfig& config, std::uint64_t seed);

/// True when both hold bit-identical tensors and the same config.
template <typename T>
bool params_bit_equal(const ModelParams<T>& a, const ModelParams<T>& b);

}  // namespace kdlab::model
