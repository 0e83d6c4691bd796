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
#include <span>
#include <vector>

#include "kdlab/numerics/tensor.hpp"
#include "kdlab/quant/format.hpp"

namespace kdlab::quant {

using numerics::Tensor;

/// Scales for one [rows x cols] matrix, grouped along columns (the input
/// dimension). A trailing partial group is treated as padded with zeros.
///
///   int affine     x = offset + q * scale, q in [0, 2^b - 1], fp16 scale/offset
///   int symmetric  x = q * scale,          |q| <= 2^(b-1) - 1, fp16 scale
///   fp8            x = e4m3(q) * scale,    one scale per row
///   nvfp4          x = e2m1(q) * (block * global), E4M3 block scales
///   bf16           x = bf16(q)
///
/// Every scale is chosen so that quantizing an already-decoded matrix picks
/// the same scales again, which makes fake quantization idempotent.
class QuantParams {
public:
    QuantParams() = default;

    /// Round-to-nearest scales for `w` (rank 2).
    static QuantParams choose(const Tensor<float>& w, const QuantFormat& format);

    /// Dynamic activation scales: fp8 uses one scale for the whole tensor,
    /// nvfp4 the same blocking as weights. Throws for int and bf16.
    static QuantParams choose_activation(const Tensor<float>& x, const QuantFormat& format);

    const QuantFormat& format() const { return format_; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t groups_per_row() const { return groups_; }

    /// Code for x at (row, col); `clipped` is set when rounding alone would
    /// have left the representable range.
    std::uint16_t encode(std::size_t row, std::size_t col, float x, bool* clipped = nullptr) const;
    float decode(std::size_t row, std::size_t col, std::uint16_t code) const;

    // Raw scale storage, exposed for serialization.
    std::vector<float> scales;   // int: rows*groups; fp8: rows (or 1); nvfp4: rows*blocks
    std::vector<float> offsets;  // int affine only
    float global_scale = 1.0f;   // nvfp4 only

    /// Rebuilds params from serialized scales.
    static QuantParams from_parts(const QuantFormat& format, std::size_t rows, std::size_t cols,
                                  std::vector<float> scales, std::vector<float> offsets,
                                  float global_scale);

private:
    std::size_t scale_index(std::size_t row, std::size_t col) const;

    QuantFormat format_;
    std::size_t rows_ = 0, cols_ = 0, groups_ = 0;
    bool per_tensor_ = false;
};

struct QuantizedTensor {
    QuantParams params;
    std::vector<std::uint16_t> codes;  // row-major, one per element

    numerics::Shape shape() const { return {params.rows(), params.cols()}; }
};

QuantizedTensor quantize_rtn(const Tensor<float>& w, const QuantFormat& format);
Tensor<float> dequantize(const QuantizedTensor& q);

/// decode(encode(x)) with round-to-nearest scales; idempotent bit for bit.
Tensor<float> fake_quant(const Tensor<float>& w, const QuantFormat& format);

/// Same, plus a per-element flag for values that were clipped.
Tensor<float> fake_quant(const Tensor<float>& w, const QuantFormat& format, std::vector<bool>& clipped);

/// Activation fake quantization with dynamic scales (see choose_activation).
Tensor<float> fake_quant_activation(const Tensor<float>& x, const QuantFormat& format);

/// Little-endian bit stream of `bits`-wide codes.
std::vector<std::uint8_t> pack_codes(std::span<const std::uint16_t> codes, unsigned bits);
std::vector<std::uint16_t> unpack_codes(std::span<const std::uint8_t> packed, unsigned bits,
                                        std::size_t count);

/// Bytes to store the tensor: packed codes plus scales at their storage
/// width (fp16 int scales/offsets, f32 fp8 row scales, one byte per nvfp4
/// block plus an f32 global scale).
std::uint64_t storage_bytes(const QuantizedTensor& q);

}  // namespace kdlab::quant
