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
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdlab/numerics/tensor.hpp"

namespace kdlab::numerics {

/// Handle to a value recorded on a Tape.
struct Var {
    std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
    bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

/// Reverse-mode tape. Records are appended in execution order, so every input
/// of a record precedes it. Each record keeps its forward function, which lets
/// `replay()` recompute all outputs after leaf values change.
template <typename T>
class Tape {
public:
    using TensorT = Tensor<T>;
    using ForwardFn = std::function<void(std::span<const TensorT* const> in, TensorT& out,
                                         std::vector<TensorT>& saved)>;
    using BackwardFn = std::function<void(
        std::span<const TensorT* const> in, const TensorT& out, const std::vector<TensorT>& saved,
        const TensorT& grad_out, std::span<TensorT* const> grad_in)>;

    Var leaf(TensorT value, bool requires_grad = true) {
        Node node;
        node.op = "leaf";
        node.value = std::move(value);
        node.requires_grad = requires_grad;
        node.is_leaf = true;
        return push(std::move(node));
    }

    Var constant(TensorT value) { return leaf(std::move(value), false); }

    /// Runs `forward` immediately and appends the record.
    Var record(std::string_view op, std::vector<Var> inputs, ForwardFn forward,
               BackwardFn backward) {
        Node node;
        node.op = op;
        node.forward = std::move(forward);
        node.backward = std::move(backward);
        for (Var v : inputs) {
            check(v);
            node.inputs.push_back(v.id);
            node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
        }
        const std::size_t id = nodes_.size();
        nodes_.push_back(std::move(node));
        run_forward(id);
        return Var{static_cast<std::uint32_t>(id)};
    }

    const TensorT& value(Var v) const {
        check(v);
        return nodes_[v.id].value;
    }

    /// Mutable access to a leaf, for perturbation before `replay()`.
    TensorT& leaf_value(Var v) {
        check(v);
        if (!nodes_[v.id].is_leaf) {
            throw Error("Tape::leaf_value: record '" + std::string(nodes_[v.id].op) +
                        "' is not a leaf");
        }
        return nodes_[v.id].value;
    }

    const TensorT& grad(Var v) const {
        check(v);
        return nodes_[v.id].grad;
    }

    std::string_view op_name(Var v) const {
        check(v);
        return nodes_[v.id].op;
    }

    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every record that requires
    /// a gradient. Leaves the loss-independent leaves with zero gradients.
    void backward(Var loss) {
        check(loss);
        if (nodes_[loss.id].value.size() != 1) {
            throw Error("Tape::backward: loss must be a scalar, got shape " +
                        shape_string(nodes_[loss.id].value.shape()));
        }
        for (Node& n : nodes_) {
            if (n.requires_grad) {
                n.grad = TensorT(n.value.shape());
            } else {
                n.grad = TensorT();
            }
        }
        if (!nodes_[loss.id].requires_grad) {
            return;
        }
        nodes_[loss.id].grad[0] = T{1};
        std::vector<const TensorT*> in;
        std::vector<TensorT*> gin;
        for (std::size_t id = loss.id + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.is_leaf || !n.requires_grad || !n.backward) {
                continue;
            }
            in.clear();
            gin.clear();
            for (std::uint32_t src : n.inputs) {
                in.push_back(&nodes_[src].value);
                gin.push_back(nodes_[src].requires_grad ? &nodes_[src].grad : nullptr);
            }
            n.backward(in, n.value, n.saved, n.grad, gin);
            for (std::size_t k = 0; k < gin.size(); ++k) {
                if (gin[k] != nullptr && !gin[k]->all_finite()) {
                    throw NumericError("non-finite gradient produced by backward of '" +
                                       std::string(n.op) + "' (record " + std::to_string(id) +
                                       ", input " + std::to_string(k) + ")");
                }
            }
        }
    }

    /// Recomputes every non-leaf record from current leaf values.
    void replay() {
        for (std::size_t id = 0; id < nodes_.size(); ++id) {
            if (!nodes_[id].is_leaf) {
                run_forward(id);
            }
        }
    }

private:
    struct Node {
        std::string op;
        std::vector<std::uint32_t> inputs;
        TensorT value;
        TensorT grad;
        std::vector<TensorT> saved;
        ForwardFn forward;
        BackwardFn backward;
        bool requires_grad = false;
        bool is_leaf = false;
    };

    Var push(Node node) {
        nodes_.push_back(std::move(node));
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    void check(Var v) const {
        if (!v.valid() || v.id >= nodes_.size()) {
            throw Error("Tape: invalid variable handle");
        }
    }

    void run_forward(std::size_t id) {
        Node& n = nodes_[id];
        std::vector<const TensorT*> in;
        in.reserve(n.inputs.size());
        for (std::uint32_t src : n.inputs) {
            in.push_back(&nodes_[src].value);
        }
        n.forward(in, n.value, n.saved);
        if (!n.value.all_finite()) {
            throw NumericError("non-finite output from '" + std::string(n.op) + "' (record " +
                               std::to_string(id) + ")");
        }
    }

    std::vector<Node> nodes_;
};

}  // namespace kdlab::numerics
