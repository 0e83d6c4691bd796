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

namespace kdlab::logitstore {

/// Top-K teacher probabilities for one token position, stored as produced by
/// the teacher softmax (not renormalized over the kept support).
struct SparseLogitRecord {
    std::vector<std::uint32_t> indices;
    std::vector<float> probs;

    std::size_t k() const { return indices.size(); }
    double retained_mass() const;

    friend bool operator==(const SparseLogitRecord&, const SparseLogitRecord&) = default;
};

/// Bytes of one stored record: K 32-bit indices plus K 32-bit probabilities.
constexpr std::uint64_t record_payload_bytes(std::uint64_t k) { return k * 8; }

/// Keeps the K largest probabilities in descending order, lower vocabulary
/// index first on ties. Throws if K > vocab or the input is not a
/// distribution (negative entries, or sum off by more than 1e-5).
SparseLogitRecord topk_sparsify(std::span<const double> probs, std::size_t k);

/// Checks ordering, range, mass and index uniqueness; throws on violation.
void validate_record(const SparseLogitRecord& record, std::size_t vocab);

}  // namespace kdlab::logitstore
