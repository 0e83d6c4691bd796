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

#include "kdlab/common.hpp"

#include <bit>
#include <cmath>
#include <limits>

namespace kdlab {

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) {
        throw Error("Rng::below: empty range");
    }
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = 0;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    // splitmix64 finalizer over the combined word
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double round_to_fp16(double x) {
    if (x == 0.0 || !std::isfinite(x)) {
        return x;
    }
    const double a = std::fabs(x);
    if (a >= 65504.0) {
        return std::copysign(65504.0, x);
    }
    int k = 0;
    std::frexp(a, &k);  // a in [2^(k-1), 2^k)
    const int e = std::max(k - 1, -14);
    const double quantum = std::ldexp(1.0, e - 10);
    const double r = std::nearbyint(a / quantum) * quantum;
    return std::copysign(std::min(r, 65504.0), x);
}

std::uint16_t fp16_bits(double x) {
    const double r = round_to_fp16(x);
    std::uint16_t sign = std::signbit(r) ? 0x8000 : 0;
    const double a = std::fabs(r);
    if (a == 0.0) {
        return sign;
    }
    if (a < 0x1.0p-14) {
        return static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(a / 0x1.0p-24));
    }
    int k = 0;
    std::frexp(a, &k);
    const int e = k - 1;
    const auto mant = static_cast<std::uint16_t>(a / std::ldexp(1.0, e - 10) - 1024.0);
    return static_cast<std::uint16_t>(sign | ((e + 15) << 10) | mant);
}

double fp16_from_bits(std::uint16_t bits) {
    const double sign = (bits & 0x8000) ? -1.0 : 1.0;
    const int exp = (bits >> 10) & 0x1F;
    const int mant = bits & 0x3FF;
    if (exp == 0) {
        return sign * std::ldexp(static_cast<double>(mant), -24);
    }
    if (exp == 31) {
        return mant == 0 ? sign * std::numeric_limits<double>::infinity()
                         : std::numeric_limits<double>::quiet_NaN();
    }
    return sign * std::ldexp(static_cast<double>(mant + 1024), exp - 25);
}

std::uint16_t bf16_bits(float x) {
    const auto bits = std::bit_cast<std::uint32_t>(x);
    if (std::isnan(x)) {
        return static_cast<std::uint16_t>((bits >> 16) | 0x40);
    }
    const std::uint32_t rounding = 0x7FFF + ((bits >> 16) & 1);
    return static_cast<std::uint16_t>((bits + rounding) >> 16);
}

float bf16_from_bits(std::uint16_t bits) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

float round_to_bf16(float x) { return bf16_from_bits(bf16_bits(x)); }

}  // namespace kdlab
