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

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "kdlab/common.hpp"
#include "kdlab/numerics/tape.hpp"

namespace kdlab::numerics {

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Builds a scalar function on a tape whose leaves are the given parameters.
template <typename T>
using ScalarFn = std::function<Var(Tape<T>&, std::span<const Var>)>;

/// Compares tape gradients with central finite differences, coordinate by
/// coordinate: |analytic - fd| / max(|analytic|, |fd|, 1e-12). Perturbed
/// points are evaluated by replaying the tape.
template <typename T>
GradcheckReport gradcheck(const ScalarFn<T>& fn, std::span<const Tensor<T>> params, T epsilon) {
    if (!(epsilon > T{0})) {
        throw Error("gradcheck: epsilon must be positive");
    }
    Tape<T> tape;
    std::vector<Var> leaves;
    for (const Tensor<T>& p : params) {
        leaves.push_back(tape.leaf(p));
    }
    const Var out = fn(tape, leaves);
    tape.backward(out);
    GradcheckReport report;
    auto evaluate = [&] {
        try {
            tape.replay();
        } catch (const NumericError& e) {
            throw Error(std::string("gradcheck: function not evaluable at perturbed point: ") +
                        e.what());
        }
        return static_cast<double>(tape.value(out)[0]);
    };
    for (std::size_t p = 0; p < leaves.size(); ++p) {
        const Tensor<T> grad = tape.grad(leaves[p]);
        for (std::size_t i = 0; i < grad.size(); ++i) {
            T& slot = tape.leaf_value(leaves[p])[i];
            const T saved = slot;
            slot = saved + epsilon;
            const double up = evaluate();
            slot = saved - epsilon;
            const double down = evaluate();
            slot = saved;
            const double fd = (up - down) / (2.0 * static_cast<double>(epsilon));
            const double an = static_cast<double>(grad[i]);
            const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-12});
            const double rel = std::fabs(an - fd) / denom;
            if (rel > report.max_rel_error) {
                report = GradcheckReport{rel, p, i, an, fd};
            }
        }
    }
    tape.replay();
    return report;
}

/// Projected variant for models too large to sweep coordinate by
/// coordinate: compares <grad, v> with central differences of f along unit
/// Gaussian directions v. Direction d perturbs parameter d % (n + 1) alone,
/// or every parameter at once when that slot equals n, so each tensor gets
/// its own probes. Two evaluations per direction. In the report
/// `worst_param` is the slot and `worst_index` the direction number.
template <typename T>
GradcheckReport gradcheck_directions(const ScalarFn<T>& fn, std::span<const Tensor<T>> params, T epsilon,
                                     std::size_t directions, std::uint64_t seed) {
    if (!(epsilon > T{0})) {
        throw Error("gradcheck: epsilon must be positive");
    }
    Tape<T> tape;
    std::vector<Var> leaves;
    for (const Tensor<T>& p : params) {
        leaves.push_back(tape.leaf(p));
    }
    const Var out = fn(tape, leaves);
    tape.backward(out);
    std::vector<Tensor<T>> grads;
    for (const Var v : leaves) {
        grads.push_back(tape.grad(v));
    }
    const std::size_t n = leaves.size();
    Rng rng(seed);
    GradcheckReport report;
    for (std::size_t d = 0; d < directions; ++d) {
        const std::size_t slot = d % (n + 1);
        const std::size_t lo = slot == n ? 0 : slot, hi = slot == n ? n : slot + 1;
        std::vector<std::vector<double>> dir(hi - lo);
        double norm2 = 0.0;
        for (std::size_t p = lo; p < hi; ++p) {
            dir[p - lo].resize(grads[p].size());
            for (double& x : dir[p - lo]) {
                x = rng.normal();
                norm2 += x * x;
            }
        }
        const double inv = 1.0 / std::sqrt(norm2);
        double an = 0.0;
        for (std::size_t p = lo; p < hi; ++p) {
            for (std::size_t i = 0; i < dir[p - lo].size(); ++i) {
                dir[p - lo][i] *= inv;
                an += static_cast<double>(grads[p][i]) * dir[p - lo][i];
            }
        }
        auto evaluate_at = [&](double step) {
            std::vector<Tensor<T>> saved;
            for (std::size_t p = lo; p < hi; ++p) {
                Tensor<T>& x = tape.leaf_value(leaves[p]);
                saved.push_back(x);
                for (std::size_t i = 0; i < x.size(); ++i) {
                    x[i] = static_cast<T>(static_cast<double>(x[i]) + step * dir[p - lo][i]);
                }
            }
            try {
                tape.replay();
            } catch (const NumericError& e) {
                throw Error(std::string("gradcheck: function not evaluable at perturbed point: ") + e.what());
            }
            const double v = static_cast<double>(tape.value(out)[0]);
            for (std::size_t p = lo; p < hi; ++p) {
                tape.leaf_value(leaves[p]) = saved[p - lo];
            }
            return v;
        };
        const double eps = static_cast<double>(epsilon);
        const double fd = (evaluate_at(eps) - evaluate_at(-eps)) / (2.0 * eps);
        const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-12});
        const double rel = std::fabs(an - fd) / denom;
        if (rel > report.max_rel_error) {
            report = GradcheckReport{rel, slot, d, an, fd};
        }
    }
    tape.replay();
    return report;
}

}  // namespace kdlab::numerics
