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

#include <cstddef>
#include <cstdint>
#include <span>

namespace kdlab::numerics {

/// Geometry of a masked attention call. Rows are tokens of several packed
/// sequences laid end to end; `seg_start[i]` is the first row that row i may
/// attend to (its document start), so the allowed keys are [seg_start[i], i].
struct AttentionShape {
    std::size_t rows = 0;
    std::size_t q_heads = 0;
    std::size_t kv_heads = 0;
    std::size_t head_dim = 0;
    /// Upper bound on i - seg_start[i] + 1; sizes the saved probability rows.
    std::size_t window = 0;
};

/// OpenMP kernels. Every output element is reduced by exactly one thread in a
/// fixed order, so results are bit-identical for any thread count.
namespace kernels {

/// y[M x N] (+)= x[M x K] * w[N x K]^T
template <typename T>
void gemm_nt(std::span<const T> x, std::span<const T> w, std::span<T> y, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate);

/// y[M x N] (+)= a[M x K] * b[K x N]
template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> y, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate);

/// y[M x N] (+)= a[K x M]^T * b[K x N]
template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> y, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate);

/// Causal, document-masked grouped-query attention. `probs` receives
/// [q_heads x rows x window] softmax rows (left-aligned at seg_start).
template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const std::uint32_t> seg_start, const AttentionShape& shape,
                       T scale, std::span<T> out, std::span<T> probs);

/// Accumulates into dq, dk, dv.
template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const std::uint32_t> seg_start, const AttentionShape& shape,
                        T scale, std::span<const T> probs, std::span<const T> dout,
                        std::span<T> dq, std::span<T> dk, std::span<T> dv);

}  // namespace kernels

/// Straightforward serial versions kept as the ground truth for the kernels.
namespace reference {

template <typename T>
void gemm_nt(std::span<const T> x, std::span<const T> w, std::span<T> y, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate);

template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> y, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate);

template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> y, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate);

/// Dense attention over all rows with an additive mask (-1e9 on disallowed
/// keys) followed by a full-row softmax.
template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const std::uint32_t> seg_start, const AttentionShape& shape,
                       T scale, std::span<T> out);

}  // namespace reference

}  // namespace kdlab::numerics
