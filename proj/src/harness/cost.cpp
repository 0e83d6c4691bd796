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

#include "kdlab/harness/cost.hpp"

#include <cmath>

#include "kdlab/common.hpp"

namespace kdlab::harness {

const char* cost_mode_name(CostMode mode) { return mode == CostMode::train ? "train" : "forward"; }

CostMode parse_cost_mode(const std::string& name) {
    if (name == "train") return CostMode::train;
    if (name == "forward") return CostMode::forward;
    throw ConfigError("unknown cost mode '" + name + "' (expected train or forward)");
}

double estimate_cost(double n_params, double tokens, CostMode mode) {
    if (!(n_params > 0 && std::isfinite(n_params)) || !(tokens > 0 && std::isfinite(tokens))) {
        throw ConfigError("estimate_cost: parameter and token counts must be positive");
    }
    return (mode == CostMode::train ? 3.0 : 1.0) * n_params * tokens;
}

CostEntry cost_entry(std::string label, double n_params, double tokens, CostMode mode) {
    return {std::move(label), n_params, tokens, mode, estimate_cost(n_params, tokens, mode)};
}

std::vector<PublishedCost> published_costs() {
    const auto row = [](const char* label, double n, double t, CostMode m, double printed, bool family) {
        return PublishedCost{cost_entry(label, n, t, m), printed, family};
    };
    using enum CostMode;
    return {
        row("teacher-8B pre-training", 8.1e9, 15e12, train, 3.7e23, false),
        row("teacher-8B logits generation", 8.1e9, 1.7e12, forward, 1.4e22, true),
        row("student-0.5B pre-training", 0.4e9, 1.7e12, train, 0.2e22, true),
        row("student-1.5B pre-training", 1.5e9, 1.7e12, train, 0.8e22, true),
        row("student-4B pre-training", 3.8e9, 1.7e12, train, 2.0e22, true),
        row("Qwen3-0.6B pre-training", 0.6e9, 36e12, train, 6.5e22, false),
        // Embedding counted once, as for the family compute sizes.
        row("EuroLLM-1.7B pre-training", 1.4e9, 4e12, train, 1.7e22, false),
        row("SmolLM2-1.7B pre-training", 1.7e9, 11e12, train, 5.6e22, false),
        row("SmolLM3-3B pre-training", 3.0e9, 11e12, train, 9.9e22, false),
    };
}

double family_cost(std::span<const PublishedCost> rows) {
    double total = 0;
    for (const auto& r : rows) {
        if (r.in_family) total += r.entry.macs;
    }
    return total;
}

double teacher_cost(std::span<const PublishedCost> rows) {
    for (const auto& r : rows) {
        if (!r.in_family && r.entry.label.starts_with("teacher-8B")) return r.entry.macs;
    }
    throw Error("teacher_cost: no teacher pre-training row");
}

}  // namespace kdlab::harness
