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

#include "kdlab/quant/gptq.hpp"

#include <cmath>

#include "kdlab/common.hpp"

namespace kdlab::quant {

HessianAccumulator::HessianAccumulator(std::size_t dim) : sum_({dim, dim}) {}

template <typename T>
void HessianAccumulator::add(const Tensor<T>& x) {
    const std::size_t d = sum_.rows();
    if (x.rank() != 2 || x.cols() != d) {
        throw Error("HessianAccumulator: expected rows of width " + std::to_string(d));
    }
    double* h = sum_.data();
    for (std::size_t n = 0; n < x.rows(); ++n) {
        const auto row = x.row(n);
        for (std::size_t i = 0; i < d; ++i) {
            const double xi = row[i];
            if (xi == 0.0) continue;
            for (std::size_t j = 0; j < d; ++j) {
                h[i * d + j] += xi * static_cast<double>(row[j]);
            }
        }
    }
    count_ += x.rows();
}

template void HessianAccumulator::add(const Tensor<float>&);
template void HessianAccumulator::add(const Tensor<double>&);

Tensor<double> HessianAccumulator::finalize(double damping) const {
    if (count_ == 0) {
        throw Error("calib_hessian: empty calibration set");
    }
    Tensor<double> h = sum_;
    const std::size_t d = h.rows();
    double mean_diag = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean_diag += h.at(i, i);
    mean_diag /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) h.at(i, i) += damping * mean_diag;
    return h;
}

Tensor<double> calib_hessian(const Tensor<float>& x, double damping) {
    HessianAccumulator acc(x.cols());
    acc.add(x);
    return acc.finalize(damping);
}

Tensor<double> cholesky(const Tensor<double>& a) {
    const std::size_t n = a.rows();
    if (a.rank() != 2 || a.cols() != n) {
        throw Error("cholesky: matrix must be square");
    }
    Tensor<double> l({n, n});
    for (std::size_t j = 0; j < n; ++j) {
        double d = a.at(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l.at(j, k) * l.at(j, k);
        if (!(d > 0.0) || !std::isfinite(d)) {
            throw NumericError("cholesky: matrix is not positive definite at pivot " + std::to_string(j) +
                               " (increase damping)");
        }
        const double ljj = std::sqrt(d);
        l.at(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a.at(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
            l.at(i, j) = s / ljj;
        }
    }
    return l;
}

Tensor<double> spd_inverse(const Tensor<double>& a) {
    const Tensor<double> l = cholesky(a);
    const std::size_t n = l.rows();
    // L^-1 by forward substitution, then A^-1 = L^-T L^-1.
    Tensor<double> li({n, n});
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t i = c; i < n; ++i) {
            double s = (i == c) ? 1.0 : 0.0;
            for (std::size_t k = c; k < i; ++k) s -= l.at(i, k) * li.at(k, c);
            li.at(i, c) = s / l.at(i, i);
        }
    }
    Tensor<double> inv({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (std::size_t k = i; k < n; ++k) s += li.at(k, i) * li.at(k, j);
            inv.at(i, j) = s;
            inv.at(j, i) = s;
        }
    }
    return inv;
}

QuantizedTensor gptq(const Tensor<float>& w, const Tensor<double>& h, const QuantFormat& format) {
    const std::size_t rows = w.rows(), cols = w.cols();
    if (h.rank() != 2 || h.rows() != cols || h.cols() != cols) {
        throw Error("gptq: Hessian is " + numerics::shape_string(h.shape()) + ", weight has " +
                    std::to_string(cols) + " input columns");
    }
    QuantizedTensor q{QuantParams::choose(w, format), std::vector<std::uint16_t>(w.size())};
    // Upper factor of H^-1 = U^T U is the transpose of its lower Cholesky factor.
    const Tensor<double> lower = cholesky(spd_inverse(h));
    Tensor<double> work = w.cast<double>();
    for (std::size_t j = 0; j < cols; ++j) {
        const double ujj = lower.at(j, j);
        for (std::size_t r = 0; r < rows; ++r) {
            const float x = static_cast<float>(work.at(r, j));
            const std::uint16_t code = q.params.encode(r, j, x);
            q.codes[r * cols + j] = code;
            const double err = (work.at(r, j) - q.params.decode(r, j, code)) / ujj;
            double* wr = &work.at(r, 0);
            for (std::size_t k = j + 1; k < cols; ++k) {
                wr[k] -= err * lower.at(k, j);
            }
        }
    }
    return q;
}

double weighted_error(const Tensor<float>& w, const Tensor<float>& q, const Tensor<double>& h) {
    if (w.shape() != q.shape() || h.rows() != w.cols()) {
        throw Error("weighted_error: shape mismatch");
    }
    const std::size_t cols = w.cols();
    std::vector<double> e(cols);
    double total = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            e[c] = static_cast<double>(w.at(r, c)) - q.at(r, c);
        }
        for (std::size_t i = 0; i < cols; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += h.at(i, j) * e[j];
            total += e[i] * s;
        }
    }
    return total;
}

}  // namespace kdlab::quant
