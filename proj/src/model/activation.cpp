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

#include "kdlab/model/activation.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace kdlab::model {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Registry {
    std::mutex mutex;
    std::map<std::string, ActivationDef> defs;

    Registry() {
        defs["silu"] = ActivationDef{
            [](double x) { return x * sigmoid(x); },
            [](double x) {
                const double s = sigmoid(x);
                return s * (1.0 + x * (1.0 - s));
            }};
        defs["squared_relu"] = ActivationDef{
            [](double x) { return x > 0.0 ? x * x : 0.0; },
            [](double x) { return x > 0.0 ? 2.0 * x : 0.0; }};
    }
};

Registry& registry() {
    static Registry r;
    return r;
}

ActivationDef lookup(const std::string& name) {
    Registry& r = registry();
    std::lock_guard lock(r.mutex);
    auto it = r.defs.find(name);
    if (it == r.defs.end()) {
        throw ConfigError("unknown activation '" + name + "'");
    }
    return it->second;
}

}  // namespace

void register_activation(const std::string& name, ActivationDef def) {
    if (!def.value || !def.derivative) {
        throw ConfigError("activation '" + name + "' needs both value and derivative");
    }
    Registry& r = registry();
    std::lock_guard lock(r.mutex);
    r.defs[name] = std::move(def);
}

bool activation_registered(const std::string& name) {
    Registry& r = registry();
    std::lock_guard lock(r.mutex);
    return r.defs.contains(name);
}

std::vector<std::string> registered_activations() {
    Registry& r = registry();
    std::lock_guard lock(r.mutex);
    std::vector<std::string> names;
    for (const auto& [name, def] : r.defs) {
        names.push_back(name);
    }
    return names;
}

double activation_value(const std::string& kind, double x) { return lookup(kind).value(x); }

template <typename T>
numerics::Var activation_apply(numerics::Tape<T>& tape, const std::string& kind,
                               numerics::Var x) {
    const ActivationDef def = lookup(kind);
    numerics::UnaryFn<T> fn{
        kind,
        [f = def.value](T v) { return static_cast<T>(f(static_cast<double>(v))); },
        [df = def.derivative](T v) { return static_cast<T>(df(static_cast<double>(v))); }};
    return numerics::unary(tape, x, fn);
}

template numerics::Var activation_apply<float>(numerics::Tape<float>&, const std::string&,
                                               numerics::Var);
template numerics::Var activation_apply<double>(numerics::Tape<double>&, const std::string&,
                                                numerics::Var);

}  // namespace kdlab::model
