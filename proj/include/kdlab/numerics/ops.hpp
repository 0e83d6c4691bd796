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
#include <string>
#include <vector>

#include "kdlab/numerics/tape.hpp"

namespace kdlab::numerics {

// Primitive inventory. Matrices are rank-2 row-major; "rows" are tokens.

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor);

/// Sum of all elements, as a scalar.
template <typename T>
Var sum(Tape<T>& tape, Var a);

template <typename T>
Var mean(Tape<T>& tape, Var a);

/// a[M x K] * b[K x N]
template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b);

/// x[M x K] * w[N x K]^T; the layout of every projection weight.
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w);

/// Row-wise RMS normalization with gain: y = x / sqrt(mean(x^2) + eps) * gain.
template <typename T>
Var rms_norm(Tape<T>& tape, Var x, Var gain, T eps);

/// Rotary position embedding applied independently to each head of x
/// [rows x heads*head_dim]; dimension pairs are (i, i + head_dim/2).
template <typename T>
Var rope(Tape<T>& tape, Var x, std::span<const std::uint32_t> positions, std::size_t heads,
         std::size_t head_dim, double base);

/// Scaled dot-product attention with causal, per-document masking.
template <typename T>
Var attention(Tape<T>& tape, Var q, Var k, Var v, std::span<const std::uint32_t> seg_start,
              std::size_t q_heads, std::size_t kv_heads, std::size_t head_dim);

/// Elementwise function with a caller-supplied derivative.
template <typename T>
struct UnaryFn {
    std::string name;
    std::function<T(T)> value;
    std::function<T(T)> derivative;
};

template <typename T>
Var unary(Tape<T>& tape, Var x, const UnaryFn<T>& fn);

template <typename T>
Var softmax_rows(Tape<T>& tape, Var x);

/// out[i] = log_softmax(logits[i])[index[i]]
template <typename T>
Var log_softmax_gather(Tape<T>& tape, Var logits, std::span<const std::uint32_t> index);

/// Row gather from an embedding table; backward scatter-adds.
template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const std::uint32_t> ids);

/// Columns [begin, end) of a matrix.
template <typename T>
Var slice_cols(Tape<T>& tape, Var x, std::size_t begin, std::size_t end);

}  // namespace kdlab::numerics
