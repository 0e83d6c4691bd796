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
#include <span>
#include <vector>

#include "kdlab/logitstore/corpus.hpp"
#include "kdlab/logitstore/shard.hpp"
#include "kdlab/model/transformer.hpp"
#include "kdlab/numerics/tape.hpp"

namespace kdlab::distill {

using numerics::Tape;
using numerics::Var;

/// Loss components averaged over the scored positions.
struct KdTerms {
    double loss = 0.0;
    double kl = 0.0;
    double ce = 0.0;
    std::size_t positions = 0;
};

/// Label value for rows that carry no next-token target.
inline constexpr std::uint32_t kIgnoreLabel = 0xFFFFFFFFu;

/// Per-row teacher targets. `indices`/`probs` hold `k` entries per row; rows
/// labelled kIgnoreLabel are not scored.
struct KdTargets {
    std::size_t k = 0;
    std::vector<std::uint32_t> indices;
    std::vector<float> probs;
    std::vector<std::uint32_t> labels;
};

/// lambda * KL(p~ || q restricted to S) + (1 - lambda) * CE(label), averaged
/// over scored rows. p~ is the stored top-K renormalized over S; q is the
/// full student softmax. Both terms share one log-softmax pass, and the
/// gradient w.r.t. the logits is (q - lambda p~ - (1 - lambda) e_label) / n.
/// Throws when a scored record has zero mass; `terms` receives the split.
template <typename T>
Var sparse_kd_loss(Tape<T>& tape, Var logits, const KdTargets& targets, double lambda,
                   KdTerms* terms = nullptr);

/// A packed training batch: several chunks laid end to end.
struct Batch {
    model::PackedInput input;
    KdTargets targets;
    std::size_t tokens = 0;
};

Batch make_batch(std::span<const logitstore::StreamItem> items);

/// Same as make_batch but with targets from a live teacher instead of shards.
Batch make_live_batch(std::span<const logitstore::TokenChunk> chunks,
                      const model::ModelParams<float>& teacher, std::size_t k);

}  // namespace kdlab::distill
