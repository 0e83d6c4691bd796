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

#include <span>
#include <string>
#include <vector>

namespace kdlab::harness {

/// Training costs three multiply-accumulates per parameter and token
/// (forward plus two for backward); logits generation is a forward pass.
/// Counts are MACs, reported as "FLOPs" as is customary for such tables.
enum class CostMode { train, forward };

const char* cost_mode_name(CostMode mode);
CostMode parse_cost_mode(const std::string& name);

struct CostEntry {
    std::string label;
    double n_params = 0;  // compute size
    double tokens = 0;
    CostMode mode = CostMode::train;
    double macs = 0;
};

/// 3*N*T for training, N*T for forward-only. Throws ConfigError unless both
/// inputs are positive and finite.
double estimate_cost(double n_params, double tokens, CostMode mode);
CostEntry cost_entry(std::string label, double n_params, double tokens, CostMode mode);

/// A row of the published cost table with its printed FLOPs value.
struct PublishedCost {
    CostEntry entry;
    double printed;
    bool in_family;  // counted in the distilled family's total
};

/// Teacher pre-training, logits generation, the three students and four
/// comparable models. Family compute sizes are the published architecture
/// table's values; other models use their nominal compute size.
std::vector<PublishedCost> published_costs();

/// Logits generation plus every student's pre-training.
double family_cost(std::span<const PublishedCost> rows);

/// Reference cost of pre-training the teacher from scratch.
double teacher_cost(std::span<const PublishedCost> rows);

}  // namespace kdlab::harness
