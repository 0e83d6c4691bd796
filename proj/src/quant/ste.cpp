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

#include "kdlab/quant/ste.hpp"

#include "kdlab/quant/tensor_quant.hpp"

namespace kdlab::quant {

namespace {

template <typename T>
using In = std::span<const numerics::Tensor<T>* const>;
template <typename T>
using GradIn = std::span<numerics::Tensor<T>* const>;

}  // namespace

template <typename T>
Var ste_fake_quant(Tape<T>& tape, Var w, const QuantFormat& format, bool clipped) {
    return tape.record(
        "ste_fake_quant", {w},
        [format, clipped](In<T> in, numerics::Tensor<T>& out, std::vector<numerics::Tensor<T>>& saved) {
            std::vector<bool> clip;
            out = fake_quant(in[0]->template cast<float>(), format, clip).template cast<T>();
            saved.assign(1, numerics::Tensor<T>(in[0]->shape(), T{1}));
            if (clipped) {
                for (std::size_t i = 0; i < clip.size(); ++i) {
                    if (clip[i]) saved[0][i] = T{0};
                }
            }
        },
        [](In<T>, const numerics::Tensor<T>&, const std::vector<numerics::Tensor<T>>& saved,
           const numerics::Tensor<T>& g, GradIn<T> gin) {
            if (gin[0]) {
                const auto& mask = saved[0];
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (mask[i] != T{0}) (*gin[0])[i] += g[i];
                }
            }
        });
}

template <typename T>
Var fake_quant_activation_op(Tape<T>& tape, Var x, const QuantFormat& format) {
    return tape.record(
        "fake_quant_activation", {x},
        [format](In<T> in, numerics::Tensor<T>& out, std::vector<numerics::Tensor<T>>&) {
            out = fake_quant_activation(in[0]->template cast<float>(), format).template cast<T>();
        },
        [](In<T>, const numerics::Tensor<T>&, const std::vector<numerics::Tensor<T>>&,
           const numerics::Tensor<T>& g, GradIn<T> gin) {
            if (gin[0]) {
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
            }
        });
}

template <typename T>
model::ForwardHooks<T> quant_hooks(const QuantFormat& format, QuantHookOptions options) {
    format.validate();
    model::ForwardHooks<T> hooks;
    if (options.weights) {
        hooks.weight = [format, clipped = options.clipped_ste](Tape<T>& tape, Var w, model::LinearSite,
                                                              std::size_t) {
            return ste_fake_quant(tape, w, format, clipped);
        };
    }
    if (options.activations) {
        hooks.input = [format](Tape<T>& tape, Var x, model::LinearSite, std::size_t) {
            return fake_quant_activation_op(tape, x, format);
        };
    }
    return hooks;
}

model::ForwardHooks<float> eval_hooks(const QuantFormat& format) {
    QuantHookOptions o;
    o.activations = format.scope == QuantScope::weight_activation;
    return quant_hooks<float>(format, o);
}

template Var ste_fake_quant(Tape<float>&, Var, const QuantFormat&, bool);
template Var ste_fake_quant(Tape<double>&, Var, const QuantFormat&, bool);
template Var fake_quant_activation_op(Tape<float>&, Var, const QuantFormat&);
template Var fake_quant_activation_op(Tape<double>&, Var, const QuantFormat&);
template model::ForwardHooks<float> quant_hooks(const QuantFormat&, QuantHookOptions);
template model::ForwardHooks<double> quant_hooks(const QuantFormat&, QuantHookOptions);

}  // namespace kdlab::quant
