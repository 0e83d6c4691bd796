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

#include "kdlab/logitstore/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "kdlab/common.hpp"

namespace kdlab::logitstore {

double SparseLogitRecord::retained_mass() const {
    double m = 0.0;
    for (float p : probs) {
        m += p;
    }
    return m;
}

SparseLogitRecord topk_sparsify(std::span<const double> probs, std::size_t k) {
    if (k > probs.size()) {
        throw Error("topk_sparsify: K=" + std::to_string(k) + " exceeds vocab " +
                    std::to_string(probs.size()));
    }
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) {
            throw Error("topk_sparsify: probabilities must be nonnegative");
        }
        total += p;
    }
    if (std::fabs(total - 1.0) > 1e-5) {
        throw Error("topk_sparsify: probabilities sum to " + std::to_string(total));
    }
    std::vector<std::uint32_t> order(probs.size());
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                          return probs[a] > probs[b] || (probs[a] == probs[b] && a < b);
                      });
    SparseLogitRecord r;
    r.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    r.probs.reserve(k);
    for (std::uint32_t i : r.indices) {
        r.probs.push_back(static_cast<float>(probs[i]));
    }
    return r;
}

void validate_record(const SparseLogitRecord& record, std::size_t vocab) {
    if (record.indices.size() != record.probs.size()) {
        throw Error("sparse record: index/probability count mismatch");
    }
    std::unordered_set<std::uint32_t> seen;
    for (std::size_t i = 0; i < record.k(); ++i) {
        const float p = record.probs[i];
        if (!(p >= 0.0f && p <= 1.0f)) {
            throw Error("sparse record: probability out of [0,1]");
        }
        if (i > 0 && p > record.probs[i - 1]) {
            throw Error("sparse record: probabilities not descending");
        }
        if (record.indices[i] >= vocab || !seen.insert(record.indices[i]).second) {
            throw Error("sparse record: invalid or duplicate index");
        }
    }
    if (record.retained_mass() > 1.0 + 1e-6) {
        throw Error("sparse record: retained mass exceeds 1");
    }
}

}  // namespace kdlab::logitstore
