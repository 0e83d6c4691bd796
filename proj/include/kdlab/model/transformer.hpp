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
#include <functional>
#include <span>
#include <vector>

#include "kdlab/model/params.hpp"
#include "kdlab/numerics/ops.hpp"

namespace kdlab::model {

using numerics::Tape;
using numerics::Var;

/// Token rows for one forward pass. Several sequences may be laid end to end;
/// `positions` restart at 0 for each sequence and `seg_start` holds the first
/// row each token may attend to.
struct PackedInput {
    std::vector<std::uint32_t> tokens;
    std::vector<std::uint32_t> positions;
    std::vector<std::uint32_t> seg_start;

    std::size_t rows() const { return tokens.size(); }

    /// Appends a sequence whose documents start at `doc_boundaries` (offsets
    /// of document starts after the first; must be strictly increasing and
    /// inside the sequence).
    void append(std::span<const std::uint32_t> tokens, std::span<const std::uint32_t> doc_boundaries);
};

PackedInput pack_input(std::span<const std::uint32_t> tokens,
                       std::span<const std::uint32_t> doc_boundaries);

/// The four projection sites of a block.
enum class LinearSite { qkv, attn_out, up, down };

const char* site_name(LinearSite site);

template <typename T>
struct ForwardHooks {
    /// Replaces a projection weight before use (fake quantization).
    std::function<Var(Tape<T>&, Var weight, LinearSite, std::size_t layer)> weight;
    /// Replaces a projection input before use (activation quantization).
    std::function<Var(Tape<T>&, Var input, LinearSite, std::size_t layer)> input;
    /// Observes projection inputs (calibration statistics).
    std::function<void(const Tape<T>&, Var input, LinearSite, std::size_t layer)> capture;
};

/// Tape leaves bound to a ModelParams, in declaration order. For tied models
/// `head` is the same variable as `embedding`.
struct ModelVars {
    Var embedding;
    struct Layer {
        Var attn_norm, qkv, attn_out, mlp_norm, up, down;
    };
    std::vector<Layer> layers;
    Var final_norm;
    Var head;

    /// Distinct leaves in the order of ModelParams::visit.
    std::vector<Var> leaves() const;
};

template <typename T>
ModelVars bind_params(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad);

/// Rebuilds ModelVars from leaves listed in ModelParams::visit order.
ModelVars vars_from_leaves(std::span<const Var> leaves, const ModelConfig& config);

/// Logits [rows x vocab] for packed input; attention is causal and confined
/// to each token's document.
template <typename T>
Var forward(Tape<T>& tape, const ModelVars& vars, const ModelConfig& config,
            const PackedInput& input, const ForwardHooks<T>* hooks = nullptr);

/// Convenience single-sequence inference.
template <typename T>
Tensor<T> forward(const ModelParams<T>& params, std::span<const std::uint32_t> tokens,
                  std::span<const std::uint32_t> doc_boundaries);

}  // namespace kdlab::model
