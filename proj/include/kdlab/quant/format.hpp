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
#include <string>
#include <string_view>
#include <vector>

namespace kdlab::quant {

enum class QuantKind { integer, fp8_e4m3, nvfp4, bf16 };
enum class QuantScope { weight_only, weight_activation };

/// A number format for the four projection matrices of every block.
///
/// Names: "int{b}g{g}" (affine, b in {2,3,4,6}), "int{b}g{g}s" (symmetric),
/// "fp8" (E4M3, per-row weight scale, dynamic per-tensor activation scale),
/// "nvfp4" (E2M1 in blocks of 16 with E4M3 block scales, weights and
/// activations), "nvfp4a16" (the same, weights only), "bf16" (passthrough).
struct QuantFormat {
    QuantKind kind = QuantKind::integer;
    unsigned bits = 4;
    std::size_t group_size = 64;  // int: along the input dim; nvfp4: always 16
    bool affine = true;           // int only
    QuantScope scope = QuantScope::weight_only;
    /// Scales are chosen for clip_ratio * (range); values beyond are clamped.
    double clip_ratio = 1.0;

    void validate() const;
    unsigned code_bits() const;

    friend bool operator==(const QuantFormat&, const QuantFormat&) = default;
};

QuantFormat parse_format(std::string_view name);
std::string format_name(const QuantFormat& format);

/// Representable values per unit scale, sorted ascending, without
/// duplicates (+0 and -0 collapse). int symmetric: -(2^(b-1)-1) .. 2^(b-1)-1;
/// int affine: 0 .. 2^b-1; fp8: every finite E4M3 value; nvfp4: the 15
/// E2M1 values. Throws ConfigError for bf16, whose grid is not enumerated.
std::vector<double> quant_grid(const QuantFormat& format);

/// FP8 E4M3 (bias 7, no infinities, S.1111.111 is NaN, max 448).
namespace e4m3 {
inline constexpr float kMax = 448.0f;
inline constexpr float kMinNormal = 0.015625f;  // 2^-6
float decode(std::uint8_t code);
/// Round-half-to-even to the nearest code; saturates to +-448; NaN -> 0x7F.
std::uint8_t encode(double x);
}  // namespace e4m3

/// FP4 E2M1 (bias 1, max 6); codes are 4 bits with the sign in bit 3.
namespace e2m1 {
inline constexpr float kMax = 6.0f;
float decode(std::uint8_t code);
std::uint8_t encode(double x);
}  // namespace e2m1

/// x rounded half-to-even to `bits` significant bits (float range).
/// Scales kept at 11 bits make code*scale products exact in float.
float round_significand(double x, int bits);

}  // namespace kdlab::quant
