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

#include "kdlab/quant/qad.hpp"

#include "kdlab/common.hpp"
#include "kdlab/distill/optimizer.hpp"
#include "kdlab/distill/schedule.hpp"
#include "kdlab/quant/ste.hpp"

namespace kdlab::quant {

QadResult qad(const model::ModelParams<float>& params, const QuantFormat& format,
              distill::BatchSource& data, const QadConfig& config,
              const std::function<void(std::size_t, double)>& on_step) {
    format.validate();
    if (data.vocab() != params.config.vocab) {
        throw ConfigError("qad: data vocab does not match the model");
    }
    QadResult result;
    result.latent = params;
    std::vector<numerics::Shape> shapes;
    params.visit([&](const std::string&, const Tensor<float>& t) { shapes.push_back(t.shape()); });
    distill::AdamW opt(config.beta1, config.beta2, config.adam_eps, config.weight_decay, shapes);
    const auto mask = distill::decay_mask(params);
    QuantHookOptions hook_options;
    hook_options.weights = true;
    hook_options.clipped_ste = config.clipped_ste;
    const auto hooks = quant_hooks<float>(format, hook_options);

    std::vector<Tensor<float>> grads;
    double first = 0.0;
    std::size_t above = 0;
    for (std::size_t step = 0; step < config.steps; ++step) {
        const distill::Batch batch = data.next_batch(config.global_batch);
        const auto terms = distill::compute_gradients(result.latent, batch, config.lambda_kd, &hooks, grads);
        if (step == 0) first = terms.loss;
        above = terms.loss > config.divergence_factor * first ? above + 1 : 0;
        if (config.divergence_window > 0 && above >= config.divergence_window) {
            throw NumericError("qad: diverged, loss above " + std::to_string(config.divergence_factor) +
                               "x the initial value for " + std::to_string(above) +
                               " consecutive steps (step " + std::to_string(step) + ")");
        }
        std::vector<Tensor<float>*> gptr;
        for (auto& g : grads) gptr.push_back(&g);
        distill::clip_grad_norm(gptr, config.grad_clip);
        std::vector<distill::ParamSlot> slots;
        std::size_t i = 0;
        result.latent.visit([&](const std::string& name, Tensor<float>& t) {
            slots.push_back({name, &t, &grads[i], mask[i]});
            ++i;
        });
        opt.step(slots, distill::cosine_lr(step, config.steps, config.lr_peak, config.lr_min_ratio), step);
        result.losses.push_back(terms.loss);
        if (on_step) on_step(step, terms.loss);
    }
    result.deliverable = quantize_model_rtn(result.latent, format);
    return result;
}

}  // namespace kdlab::quant
