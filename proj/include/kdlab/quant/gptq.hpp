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

#include "kdlab/numerics/tensor.hpp"
#include "kdlab/quant/tensor_quant.hpp"

namespace kdlab::quant {

inline constexpr double kHessianDamping = 0.01;

/// Running sum of x x^T over calibration rows.
class HessianAccumulator {
public:
    explicit HessianAccumulator(std::size_t dim);

    /// Adds every row of `x` ([n, dim]).
    template <typename T>
    void add(const Tensor<T>& x);

    std::size_t count() const { return count_; }

    /// sum + damping * mean(diag(sum)) * I. Throws when no rows were added.
    Tensor<double> finalize(double damping = kHessianDamping) const;

private:
    Tensor<double> sum_;
    std::size_t count_ = 0;
};

/// H = sum_i x_i x_i^T + 0.01 * mean(diag) * I over the rows of `x`.
Tensor<double> calib_hessian(const Tensor<float>& x, double damping = kHessianDamping);

/// Lower-triangular L with A = L L^T. Throws NumericError naming the pivot
/// when A is not positive definite.
Tensor<double> cholesky(const Tensor<double>& a);

/// A^-1 for symmetric positive definite A, via its Cholesky factor.
Tensor<double> spd_inverse(const Tensor<double>& a);

/// GPTQ with the round-to-nearest scales of `w`: columns are quantized in
/// natural order and each column's error, divided by the diagonal of the
/// upper Cholesky factor U of H^-1, is pushed onto the later columns along
/// the matching row of U. With a diagonal H nothing propagates and the
/// result is RTN bit for bit.
QuantizedTensor gptq(const Tensor<float>& w, const Tensor<double>& h, const QuantFormat& format);

/// tr((W - Q) H (W - Q)^T): the calibration-weighted output error.
double weighted_error(const Tensor<float>& w, const Tensor<float>& q, const Tensor<double>& h);

}  // namespace kdlab::quant
