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
#include <string>

#include <json.hpp>

namespace kdlab::distill {

struct TrainConfig {
    double lr_peak = 3e-3;
    std::size_t global_batch = 8;  // chunks per iteration
    std::size_t total_iters = 100;
    std::size_t warmup_iters = 1;
    std::size_t decay_start_iter = 80;
    double lr_min_ratio = 0.1;
    double weight_decay = 0.1;
    double lambda_kd = 0.9;
    std::string optimizer = "adamw";
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;  // global L2 norm; 0 disables
    std::size_t checkpoint_interval = 0;  // 0: only the final checkpoint
    std::size_t log_interval = 10;
    std::size_t eval_interval = 0;  // 0: only at the end

    /// Throws ConfigError on the first violated constraint.
    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Warmup-stable-decay: linear 0 -> peak over [0, warmup], flat until
/// decay_start, then linear to lr_min_ratio * peak at total_iters.
/// Defined for step in [0, total_iters]; throws outside.
double wsd_lr(std::size_t step, const TrainConfig& config);

/// Half-cosine from peak at step 0 to min_ratio * peak at `total`.
double cosine_lr(std::size_t step, std::size_t total, double peak, double min_ratio);

/// Hyper-parameters of the released students. Batch sizes count sequences
/// of kPublishedSeqLen tokens.
struct PublishedRecipe {
    const char* model;
    double lr_peak;
    std::size_t global_batch;
    std::size_t total_iters;

    std::uint64_t tokens() const;
};

inline constexpr std::size_t kPublishedSeqLen = 4096;

std::span<const PublishedRecipe> published_recipes();

}  // namespace kdlab::distill
