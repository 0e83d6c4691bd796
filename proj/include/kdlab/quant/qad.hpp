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

#include <functional>
#include <vector>

#include "kdlab/distill/trainer.hpp"
#include "kdlab/quant/ptq.hpp"

namespace kdlab::quant {

struct QadConfig {
    std::size_t steps = 100;
    std::size_t global_batch = 8;
    double lr_peak = 1e-3;
    double lr_min_ratio = 0.0;  // cosine floor
    double lambda_kd = 1.0;     // pure distillation by default
    double weight_decay = 0.0;
    double grad_clip = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    bool clipped_ste = true;
    /// Abort when the loss stays above factor * (first-step loss) for this
    /// many consecutive steps.
    std::size_t divergence_window = 100;
    double divergence_factor = 2.0;
};

struct QadResult {
    model::ModelParams<float> latent;  // trained full-precision weights
    QuantizedModel deliverable;        // RTN of `latent`, the shipped model
    std::vector<double> losses;        // per step
};

/// Quantization-aware distillation: trains all parameters through
/// weight fake quantization (straight-through gradients) against the
/// teacher targets produced by `data`, with AdamW and a cosine schedule.
/// Activations are not quantized during training. Throws NumericError on
/// divergence.
QadResult qad(const model::ModelParams<float>& params, const QuantFormat& format,
              distill::BatchSource& data, const QadConfig& config,
              const std::function<void(std::size_t step, double loss)>& on_step = {});

}  // namespace kdlab::quant
