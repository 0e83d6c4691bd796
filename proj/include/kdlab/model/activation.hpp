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
#include <string>
#include <vector>

#include "kdlab/numerics/ops.hpp"

namespace kdlab::model {

/// Scalar definition of an MLP activation. Plug-ins (for example an xIELU
/// implementation) register one of these under a new name.
struct ActivationDef {
    std::function<double(double)> value;
    std::function<double(double)> derivative;
};

/// Built-ins: "silu" and "squared_relu". Re-registering a name replaces it.
void register_activation(const std::string& name, ActivationDef def);
bool activation_registered(const std::string& name);
std::vector<std::string> registered_activations();

/// Elementwise activation on a tape. Throws ConfigError for unknown kinds.
template <typename T>
numerics::Var activation_apply(numerics::Tape<T>& tape, const std::string& kind,
                               numerics::Var x);

/// Plain scalar evaluation, for tests and inference tables.
double activation_value(const std::string& kind, double x);

}  // namespace kdlab::model
