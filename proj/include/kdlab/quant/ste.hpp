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

#include "kdlab/model/transformer.hpp"
#include "kdlab/numerics/tape.hpp"
#include "kdlab/quant/format.hpp"

namespace kdlab::quant {

using numerics::Tape;
using numerics::Var;

/// Forward: fake_quant(w) with scales chosen from the current w.
/// Backward: the straight-through estimator. The incoming gradient passes
/// unchanged, except that with `clipped` set, elements whose code was
/// clamped at the grid extremes receive zero.
template <typename T>
Var ste_fake_quant(Tape<T>& tape, Var w, const QuantFormat& format, bool clipped = true);

/// Dynamic activation fake quantization with a pass-through gradient.
template <typename T>
Var fake_quant_activation_op(Tape<T>& tape, Var x, const QuantFormat& format);

struct QuantHookOptions {
    bool weights = false;      // fake-quantize projection weights (STE)
    bool activations = false;  // fake-quantize projection inputs
    bool clipped_ste = true;
};

/// Hooks that quantize the four projection sites of every block.
/// Embeddings, norms and the output head stay in full precision.
template <typename T>
model::ForwardHooks<T> quant_hooks(const QuantFormat& format, QuantHookOptions options);

/// Activation hooks for evaluating a model in `format`: empty for
/// weight-only formats.
model::ForwardHooks<float> eval_hooks(const QuantFormat& format);

}  // namespace kdlab::quant
