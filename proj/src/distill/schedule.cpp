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

#include "kdlab/distill/schedule.hpp"

#include <cmath>
#include <numbers>

#include "kdlab/common.hpp"

namespace kdlab::distill {

void TrainConfig::validate() const {
    if (!(lr_peak > 0.0)) throw ConfigError("train: lr_peak must be positive");
    if (global_batch == 0) throw ConfigError("train: global_batch must be positive");
    if (total_iters == 0) throw ConfigError("train: total_iters must be positive");
    if (!(warmup_iters <= decay_start_iter && decay_start_iter <= total_iters)) {
        throw ConfigError("train: need warmup_iters <= decay_start_iter <= total_iters");
    }
    if (!(lambda_kd >= 0.0 && lambda_kd <= 1.0)) throw ConfigError("train: lambda_kd must be in [0,1]");
    if (!(lr_min_ratio >= 0.0 && lr_min_ratio <= 1.0)) {
        throw ConfigError("train: lr_min_ratio must be in [0,1]");
    }
    if (weight_decay < 0.0 || grad_clip < 0.0) throw ConfigError("train: negative decay or clip");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) {
        throw ConfigError("train: invalid optimizer moments");
    }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"lr_peak", c.lr_peak},
         {"global_batch", c.global_batch},
         {"total_iters", c.total_iters},
         {"warmup_iters", c.warmup_iters},
         {"decay_start_iter", c.decay_start_iter},
         {"lr_min_ratio", c.lr_min_ratio},
         {"weight_decay", c.weight_decay},
         {"lambda_kd", c.lambda_kd},
         {"optimizer", c.optimizer},
         {"seed", c.seed},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"adam_eps", c.adam_eps},
         {"grad_clip", c.grad_clip},
         {"checkpoint_interval", c.checkpoint_interval},
         {"log_interval", c.log_interval},
         {"eval_interval", c.eval_interval}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig d;
    c.lr_peak = j.value("lr_peak", d.lr_peak);
    c.global_batch = j.value("global_batch", d.global_batch);
    c.total_iters = j.value("total_iters", d.total_iters);
    c.warmup_iters = j.value("warmup_iters", std::max<std::size_t>(1, c.total_iters / 100));
    c.decay_start_iter = j.value("decay_start_iter", c.total_iters * 4 / 5);
    c.lr_min_ratio = j.value("lr_min_ratio", d.lr_min_ratio);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.lambda_kd = j.value("lambda_kd", d.lambda_kd);
    c.optimizer = j.value("optimizer", d.optimizer);
    c.seed = j.value("seed", d.seed);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
    c.log_interval = j.value("log_interval", d.log_interval);
    c.eval_interval = j.value("eval_interval", d.eval_interval);
}

double wsd_lr(std::size_t step, const TrainConfig& c) {
    if (step > c.total_iters) {
        throw Error("wsd_lr: step " + std::to_string(step) + " beyond total_iters " +
                    std::to_string(c.total_iters));
    }
    const double peak = c.lr_peak;
    if (step < c.warmup_iters) {
        return peak * static_cast<double>(step) / static_cast<double>(c.warmup_iters);
    }
    // An empty decay phase means no annealing at all.
    if (step <= c.decay_start_iter || c.decay_start_iter == c.total_iters) {
        return peak;
    }
    const double frac = static_cast<double>(step - c.decay_start_iter) /
                        static_cast<double>(c.total_iters - c.decay_start_iter);
    return peak * (1.0 - frac * (1.0 - c.lr_min_ratio));
}

double cosine_lr(std::size_t step, std::size_t total, double peak, double min_ratio) {
    if (total == 0) {
        return peak;
    }
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
    const double cosv = 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    return peak * (min_ratio + (1.0 - min_ratio) * cosv);
}

std::uint64_t PublishedRecipe::tokens() const {
    return static_cast<std::uint64_t>(global_batch) * kPublishedSeqLen * total_iters;
}

std::span<const PublishedRecipe> published_recipes() {
    static constexpr PublishedRecipe kRecipes[] = {
        {"student-0.5B", 6e-4, 512, 800000},
        {"student-1.5B", 3e-4, 512, 800000},
        {"student-4B", 2e-4, 1024, 400000},
    };
    return kRecipes;
}

}  // namespace kdlab::distill
