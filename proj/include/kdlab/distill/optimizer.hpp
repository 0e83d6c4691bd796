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
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kdlab/distill/schedule.hpp"
#include "kdlab/numerics/tensor.hpp"

namespace kdlab::distill {

using numerics::Tensor;

/// One trainable tensor as seen by an optimizer.
struct ParamSlot {
    std::string name;
    Tensor<float>* value = nullptr;
    const Tensor<float>* grad = nullptr;
    bool decay = true;  // decoupled weight decay applies
};

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual std::string name() const = 0;

    /// Updates every slot in place. `iter` is the 0-based global iteration,
    /// used only for error messages; a non-finite gradient throws
    /// NumericError before any parameter is touched.
    virtual void step(std::span<const ParamSlot> slots, double lr, std::size_t iter) = 0;

    /// Internal state as tensors plus a step counter, for checkpoints.
    virtual std::vector<Tensor<float>> state() const = 0;
    virtual std::uint64_t steps_taken() const = 0;
    virtual void load_state(std::vector<Tensor<float>> state, std::uint64_t steps) = 0;
};

using OptimizerFactory =
    std::function<std::unique_ptr<Optimizer>(const TrainConfig&, std::span<const numerics::Shape>)>;

/// Built-in: "adamw". Other optimizers (for example an AdEMAMix
/// implementation) register under their own name.
void register_optimizer(const std::string& name, OptimizerFactory factory);
bool optimizer_registered(const std::string& name);
std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config,
                                          std::span<const numerics::Shape> shapes);

/// AdamW with bias-corrected moments and decoupled decay:
///   p <- p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW final : public Optimizer {
public:
    AdamW(double beta1, double beta2, double eps, double weight_decay,
          std::span<const numerics::Shape> shapes);

    std::string name() const override { return "adamw"; }
    void step(std::span<const ParamSlot> slots, double lr, std::size_t iter) override;
    std::vector<Tensor<float>> state() const override;
    std::uint64_t steps_taken() const override { return t_; }
    void load_state(std::vector<Tensor<float>> state, std::uint64_t steps) override;

private:
    double beta1_, beta2_, eps_, wd_;
    std::vector<Tensor<float>> m_, v_;
    std::uint64_t t_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm; returns
/// the norm before clipping.
double clip_grad_norm(std::span<Tensor<float>* const> grads, double max_norm);

}  // namespace kdlab::distill
