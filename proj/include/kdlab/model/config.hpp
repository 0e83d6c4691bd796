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
#include <string>

#include <json.hpp>

namespace kdlab::model {

/// Architecture hyper-parameters of the dense pre-norm transformer.
struct ModelConfig {
    std::size_t layers = 2;
    std::size_t dim = 64;
    std::size_t mlp_dim = 256;
    std::size_t q_heads = 4;
    std::size_t kv_heads = 2;
    std::size_t vocab = 257;
    std::size_t seq_len = 64;
    bool tied_embeddings = true;
    std::string activation = "silu";
    double rope_base = 10000.0;
    double norm_eps = 1e-5;

    std::size_t head_dim() const { return dim / q_heads; }
    std::size_t kv_dim() const { return kv_heads * head_dim(); }
    std::size_t qkv_rows() const { return dim + 2 * kv_dim(); }

    /// Throws ConfigError naming the first violated constraint.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct ParamCount {
    std::uint64_t total = 0;
    std::uint64_t non_embedding = 0;
};

/// Closed-form parameter count. The LM head is counted once when tied.
ParamCount count_params(const ModelConfig& config);

/// Reference architectures (vocab 131072, the teacher tokenizer size).
namespace presets {
ModelConfig student_0_5b();
ModelConfig student_1_5b();
ModelConfig student_4b();
ModelConfig teacher_8b();
}  // namespace presets

}  // namespace kdlab::model
