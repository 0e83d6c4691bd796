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

#include "kdlab/distill/optimizer.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include "kdlab/common.hpp"

namespace kdlab::distill {

namespace {

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::map<std::string, OptimizerFactory>& registry() {
    static std::map<std::string, OptimizerFactory> r{
        {"adamw", [](const TrainConfig& c, std::span<const numerics::Shape> shapes) {
             return std::unique_ptr<Optimizer>(
                 new AdamW(c.beta1, c.beta2, c.adam_eps, c.weight_decay, shapes));
         }}};
    return r;
}

}  // namespace

void register_optimizer(const std::string& name, OptimizerFactory factory) {
    std::lock_guard lock(registry_mutex());
    registry()[name] = std::move(factory);
}

bool optimizer_registered(const std::string& name) {
    std::lock_guard lock(registry_mutex());
    return registry().count(name) != 0;
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config,
                                          std::span<const numerics::Shape> shapes) {
    OptimizerFactory f;
    {
        std::lock_guard lock(registry_mutex());
        const auto it = registry().find(config.optimizer);
        if (it == registry().end()) {
            throw ConfigError("unknown optimizer '" + config.optimizer + "'");
        }
        f = it->second;
    }
    return f(config, shapes);
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay,
             std::span<const numerics::Shape> shapes)
    : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
    for (const auto& s : shapes) {
        m_.emplace_back(s);
        v_.emplace_back(s);
    }
}

void AdamW::step(std::span<const ParamSlot> slots, double lr, std::size_t iter) {
    if (slots.size() != m_.size()) {
        throw Error("AdamW: slot count changed");
    }
    for (const auto& s : slots) {
        if (s.grad->shape() != s.value->shape()) {
            throw Error("AdamW: gradient shape mismatch for " + s.name);
        }
        if (!s.grad->all_finite()) {
            throw NumericError("non-finite gradient in '" + s.name + "' at iteration " +
                               std::to_string(iter));
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const ParamSlot& s = slots[i];
        float* p = s.value->data();
        const float* g = s.grad->data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const double decay = s.decay ? lr * wd_ : 0.0;
        for (std::size_t j = 0; j < s.value->size(); ++j) {
            const double gj = g[j];
            const double mj = beta1_ * m[j] + (1.0 - beta1_) * gj;
            const double vj = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps_);
            p[j] = static_cast<float>(p[j] - decay * p[j] - lr * update);
        }
    }
}

std::vector<Tensor<float>> AdamW::state() const {
    std::vector<Tensor<float>> out = m_;
    out.insert(out.end(), v_.begin(), v_.end());
    return out;
}

void AdamW::load_state(std::vector<Tensor<float>> state, std::uint64_t steps) {
    if (state.size() != 2 * m_.size()) {
        throw Error("AdamW: state has " + std::to_string(state.size()) + " tensors, expected " +
                    std::to_string(2 * m_.size()));
    }
    for (std::size_t i = 0; i < m_.size(); ++i) {
        if (state[i].shape() != m_[i].shape() || state[m_.size() + i].shape() != v_[i].shape()) {
            throw Error("AdamW: state shape mismatch");
        }
        m_[i] = std::move(state[i]);
        v_[i] = std::move(state[m_.size() + i]);
    }
    t_ = steps;
}

double clip_grad_norm(std::span<Tensor<float>* const> grads, double max_norm) {
    double sq = 0.0;
    for (const auto* g : grads) {
        for (float x : g->span()) sq += static_cast<double>(x) * x;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const float f = static_cast<float>(max_norm / norm);
        for (auto* g : grads) {
            for (float& x : g->span()) x *= f;
        }
    }
    return norm;
}

}  // namespace kdlab::distill
