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

#include "kdlab/model/transformer.hpp"

#include "kdlab/model/activation.hpp"

namespace kdlab::model {

using numerics::attention;
using numerics::linear;
using numerics::rms_norm;

void PackedInput::append(std::span<const std::uint32_t> seq,
                         std::span<const std::uint32_t> doc_boundaries) {
    for (std::size_t i = 0; i < doc_boundaries.size(); ++i) {
        if (doc_boundaries[i] >= seq.size()) {
            throw Error("document boundary " + std::to_string(doc_boundaries[i]) +
                        " outside sequence of length " + std::to_string(seq.size()));
        }
        if (i > 0 && doc_boundaries[i] <= doc_boundaries[i - 1]) {
            throw Error("document boundaries must be strictly increasing");
        }
    }
    const auto base = static_cast<std::uint32_t>(tokens.size());
    std::size_t next = 0;
    std::uint32_t start = base;
    for (std::size_t t = 0; t < seq.size(); ++t) {
        if (next < doc_boundaries.size() && doc_boundaries[next] == t) {
            start = base + static_cast<std::uint32_t>(t);
            ++next;
        }
        tokens.push_back(seq[t]);
        positions.push_back(static_cast<std::uint32_t>(t));
        seg_start.push_back(start);
    }
}

PackedInput pack_input(std::span<const std::uint32_t> tokens,
                       std::span<const std::uint32_t> doc_boundaries) {
    PackedInput in;
    in.append(tokens, doc_boundaries);
    return in;
}

const char* site_name(LinearSite site) {
    switch (site) {
        case LinearSite::qkv:
            return "qkv";
        case LinearSite::attn_out:
            return "attn_out";
        case LinearSite::up:
            return "up";
        case LinearSite::down:
            return "down";
    }
    return "?";
}

std::vector<Var> ModelVars::leaves() const {
    std::vector<Var> out{embedding};
    for (const Layer& l : layers) {
        out.insert(out.end(), {l.attn_norm, l.qkv, l.attn_out, l.mlp_norm, l.up, l.down});
    }
    out.push_back(final_norm);
    if (head.id != embedding.id) {
        out.push_back(head);
    }
    return out;
}

template <typename T>
ModelVars bind_params(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad) {
    ModelVars v;
    v.embedding = tape.leaf(params.embedding, requires_grad);
    for (const auto& l : params.layers) {
        ModelVars::Layer lv;
        lv.attn_norm = tape.leaf(l.attn_norm, requires_grad);
        lv.qkv = tape.leaf(l.qkv, requires_grad);
        lv.attn_out = tape.leaf(l.attn_out, requires_grad);
        lv.mlp_norm = tape.leaf(l.mlp_norm, requires_grad);
        lv.up = tape.leaf(l.up, requires_grad);
        lv.down = tape.leaf(l.down, requires_grad);
        v.layers.push_back(lv);
    }
    v.final_norm = tape.leaf(params.final_norm, requires_grad);
    v.head = params.untied ? tape.leaf(*params.untied, requires_grad) : v.embedding;
    return v;
}

ModelVars vars_from_leaves(std::span<const Var> leaves, const ModelConfig& config) {
    const std::size_t expected = 2 + 6 * config.layers + (config.tied_embeddings ? 0 : 1);
    if (leaves.size() != expected) {
        throw Error("vars_from_leaves: expected " + std::to_string(expected) + " leaves, got " +
                    std::to_string(leaves.size()));
    }
    std::size_t i = 0;
    ModelVars v;
    v.embedding = leaves[i++];
    for (std::size_t l = 0; l < config.layers; ++l) {
        ModelVars::Layer lv;
        lv.attn_norm = leaves[i++];
        lv.qkv = leaves[i++];
        lv.attn_out = leaves[i++];
        lv.mlp_norm = leaves[i++];
        lv.up = leaves[i++];
        lv.down = leaves[i++];
        v.layers.push_back(lv);
    }
    v.final_norm = leaves[i++];
    v.head = config.tied_embeddings ? v.embedding : leaves[i++];
    return v;
}

template <typename T>
Var forward(Tape<T>& tape, const ModelVars& vars, const ModelConfig& config,
            const PackedInput& input, const ForwardHooks<T>* hooks) {
    for (std::uint32_t tok : input.tokens) {
        if (tok >= config.vocab) {
            throw Error("token id " + std::to_string(tok) + " out of range for vocab " +
                        std::to_string(config.vocab));
        }
    }
    const T eps = static_cast<T>(config.norm_eps);
    const std::size_t hd = config.head_dim();
    auto project = [&](Var x, Var w, LinearSite site, std::size_t layer) {
        if (hooks && hooks->input) {
            x = hooks->input(tape, x, site, layer);
        }
        if (hooks && hooks->capture) {
            hooks->capture(tape, x, site, layer);
        }
        if (hooks && hooks->weight) {
            w = hooks->weight(tape, w, site, layer);
        }
        return linear(tape, x, w);
    };

    Var h = numerics::embedding(tape, vars.embedding, input.tokens);
    for (std::size_t l = 0; l < vars.layers.size(); ++l) {
        const ModelVars::Layer& lv = vars.layers[l];
        const Var a = rms_norm(tape, h, lv.attn_norm, eps);
        const Var qkv = project(a, lv.qkv, LinearSite::qkv, l);
        Var q = numerics::slice_cols(tape, qkv, 0, config.dim);
        Var k = numerics::slice_cols(tape, qkv, config.dim, config.dim + config.kv_dim());
        const Var v =
            numerics::slice_cols(tape, qkv, config.dim + config.kv_dim(), config.qkv_rows());
        q = numerics::rope(tape, q, input.positions, config.q_heads, hd, config.rope_base);
        k = numerics::rope(tape, k, input.positions, config.kv_heads, hd, config.rope_base);
        const Var att = attention(tape, q, k, v, input.seg_start, config.q_heads,
                                  config.kv_heads, hd);
        h = numerics::add(tape, h, project(att, lv.attn_out, LinearSite::attn_out, l));
        const Var m = rms_norm(tape, h, lv.mlp_norm, eps);
        const Var u = activation_apply(tape, config.activation,
                                       project(m, lv.up, LinearSite::up, l));
        h = numerics::add(tape, h, project(u, lv.down, LinearSite::down, l));
    }
    h = rms_norm(tape, h, vars.final_norm, eps);
    return linear(tape, h, vars.head);
}

template <typename T>
Tensor<T> forward(const ModelParams<T>& params, std::span<const std::uint32_t> tokens,
                  std::span<const std::uint32_t> doc_boundaries) {
    Tape<T> tape;
    const ModelVars vars = bind_params(tape, params, false);
    const PackedInput in = pack_input(tokens, doc_boundaries);
    return tape.value(forward(tape, vars, params.config, in));
}

template ModelVars bind_params<float>(Tape<float>&, const ModelParams<float>&, bool);
template ModelVars bind_params<double>(Tape<double>&, const ModelParams<double>&, bool);
template Var forward<float>(Tape<float>&, const ModelVars&, const ModelConfig&,
                            const PackedInput&, const ForwardHooks<float>*);
template Var forward<double>(Tape<double>&, const ModelVars&, const ModelConfig&,
                             const PackedInput&, const ForwardHooks<double>*);
template Tensor<float> forward<float>(const ModelParams<float>&, std::span<const std::uint32_t>,
                                      std::span<const std::uint32_t>);
template Tensor<double> forward<double>(const ModelParams<double>&,
                                        std::span<const std::uint32_t>,
                                        std::span<const std::uint32_t>);

}  // namespace kdlab::model
