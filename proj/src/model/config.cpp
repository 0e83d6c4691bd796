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

#include "kdlab/model/config.hpp"

#include "kdlab/common.hpp"
#include "kdlab/model/activation.hpp"

namespace kdlab::model {

void ModelConfig::validate() const {
    if (dim == 0 || q_heads == 0 || kv_heads == 0) {
        throw ConfigError("model config: dim and head counts must be positive");
    }
    if (dim % q_heads != 0) {
        throw ConfigError("model config: dim " + std::to_string(dim) +
                          " not divisible by q_heads " + std::to_string(q_heads));
    }
    if (q_heads % kv_heads != 0) {
        throw ConfigError("model config: q_heads " + std::to_string(q_heads) +
                          " not divisible by kv_heads " + std::to_string(kv_heads));
    }
    if (head_dim() % 2 != 0) {
        throw ConfigError("model config: head_dim must be even for rotary embedding");
    }
    if (seq_len == 0) {
        throw ConfigError("model config: seq_len must be positive");
    }
    if (vocab <= 1) {
        throw ConfigError("model config: vocab must exceed 1");
    }
    if (layers > 0 && mlp_dim == 0) {
        throw ConfigError("model config: mlp_dim must be positive");
    }
    if (!activation_registered(activation)) {
        throw ConfigError("model config: unknown activation '" + activation + "'");
    }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"layers", c.layers},
                       {"dim", c.dim},
                       {"mlp_dim", c.mlp_dim},
                       {"q_heads", c.q_heads},
                       {"kv_heads", c.kv_heads},
                       {"vocab", c.vocab},
                       {"seq_len", c.seq_len},
                       {"tied_embeddings", c.tied_embeddings},
                       {"activation", c.activation},
                       {"rope_base", c.rope_base},
                       {"norm_eps", c.norm_eps}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.layers = j.value("layers", d.layers);
    c.dim = j.value("dim", d.dim);
    c.mlp_dim = j.value("mlp_dim", d.mlp_dim);
    c.q_heads = j.value("q_heads", d.q_heads);
    c.kv_heads = j.value("kv_heads", d.kv_heads);
    c.vocab = j.value("vocab", d.vocab);
    c.seq_len = j.value("seq_len", d.seq_len);
    c.tied_embeddings = j.value("tied_embeddings", d.tied_embeddings);
    c.activation = j.value("activation", d.activation);
    c.rope_base = j.value("rope_base", d.rope_base);
    c.norm_eps = j.value("norm_eps", d.norm_eps);
}

ParamCount count_params(const ModelConfig& c) {
    const std::uint64_t dim = c.dim;
    const std::uint64_t per_layer = dim                              // attention norm
                                    + c.qkv_rows() * dim             // fused QKV
                                    + dim * dim                      // output projection
                                    + dim                            // mlp norm
                                    + 2 * static_cast<std::uint64_t>(c.mlp_dim) * dim;  // up+down
    ParamCount out;
    out.non_embedding = per_layer * c.layers + dim;  // + final norm
    const std::uint64_t emb = static_cast<std::uint64_t>(c.vocab) * dim;
    out.total = out.non_embedding + (c.tied_embeddings ? emb : 2 * emb);
    return out;
}

namespace presets {

namespace {
ModelConfig make(std::size_t layers, std::size_t dim, std::size_t mlp, std::size_t qh,
                 std::size_t kvh, bool tied) {
    ModelConfig c;
    c.layers = layers;
    c.dim = dim;
    c.mlp_dim = mlp;
    c.q_heads = qh;
    c.kv_heads = kvh;
    c.vocab = 131072;
    c.seq_len = 4096;
    c.tied_embeddings = tied;
    return c;
}
}  // namespace

ModelConfig student_0_5b() { return make(20, 1024, 6144, 16, 4, true); }
ModelConfig student_1_5b() { return make(16, 2048, 12288, 32, 8, false); }
ModelConfig student_4b() { return make(24, 3072, 16384, 24, 8, false); }
ModelConfig teacher_8b() { return make(32, 4096, 21504, 32, 8, false); }

}  // namespace presets

}  // namespace kdlab::model
