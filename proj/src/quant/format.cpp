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

#include "kdlab/quant/format.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>

#include "kdlab/common.hpp"

namespace kdlab::quant {

void QuantFormat::validate() const {
    if (!(clip_ratio > 0.0 && clip_ratio <= 1.0)) {
        throw ConfigError("quant format: clip_ratio must be in (0, 1]");
    }
    switch (kind) {
    case QuantKind::integer:
        if (bits != 2 && bits != 3 && bits != 4 && bits != 6) {
            throw ConfigError("quant format: int bits must be 2, 3, 4 or 6, got " + std::to_string(bits));
        }
        if (group_size == 0) {
            throw ConfigError("quant format: group size must be positive");
        }
        if (scope != QuantScope::weight_only) {
            throw ConfigError("quant format: int formats are weight-only");
        }
        break;
    case QuantKind::nvfp4:
        if (group_size != 16) {
            throw ConfigError("quant format: nvfp4 blocks are 16 elements");
        }
        break;
    case QuantKind::fp8_e4m3:
    case QuantKind::bf16:
        break;
    }
}

unsigned QuantFormat::code_bits() const {
    switch (kind) {
    case QuantKind::integer: return bits;
    case QuantKind::fp8_e4m3: return 8;
    case QuantKind::nvfp4: return 4;
    case QuantKind::bf16: return 16;
    }
    return 0;
}

QuantFormat parse_format(std::string_view name) {
    QuantFormat f;
    if (name == "fp8") {
        f = {QuantKind::fp8_e4m3, 8, 0, false, QuantScope::weight_activation};
    } else if (name == "nvfp4" || name == "nvfp4a16") {
        f = {QuantKind::nvfp4, 4, 16, false,
             name == "nvfp4" ? QuantScope::weight_activation : QuantScope::weight_only};
    } else if (name == "bf16") {
        f = {QuantKind::bf16, 16, 0, false, QuantScope::weight_only};
    } else if (name.substr(0, 3) == "int") {
        // int{b}g{g}[s]
        std::string s(name.substr(3));
        const auto g = s.find('g');
        if (g == std::string::npos || g == 0) {
            throw ConfigError("unknown quant format '" + std::string(name) + "'");
        }
        f.kind = QuantKind::integer;
        f.affine = true;
        if (!s.empty() && s.back() == 's') {
            f.affine = false;
            s.pop_back();
        }
        try {
            std::size_t used = 0;
            f.bits = static_cast<unsigned>(std::stoul(s.substr(0, g), &used));
            if (used != g) throw std::invalid_argument("bits");
            const std::string gs = s.substr(g + 1);
            f.group_size = std::stoul(gs, &used);
            if (used != gs.size()) throw std::invalid_argument("group");
        } catch (const std::logic_error&) {
            throw ConfigError("unknown quant format '" + std::string(name) + "'");
        }
    } else {
        throw ConfigError("unknown quant format '" + std::string(name) + "'");
    }
    f.validate();
    return f;
}

std::string format_name(const QuantFormat& f) {
    switch (f.kind) {
    case QuantKind::integer:
        return "int" + std::to_string(f.bits) + "g" + std::to_string(f.group_size) + (f.affine ? "" : "s");
    case QuantKind::fp8_e4m3: return "fp8";
    case QuantKind::nvfp4: return f.scope == QuantScope::weight_activation ? "nvfp4" : "nvfp4a16";
    case QuantKind::bf16: return "bf16";
    }
    return "?";
}

namespace {

// Positive magnitudes indexed by code (sign bit clear). Strictly increasing.
const std::array<float, 127>& e4m3_magnitudes() {
    static const auto table = [] {
        std::array<float, 127> t{};
        for (unsigned c = 0; c < 127; ++c) {
            const unsigned e = c >> 3, m = c & 7;
            t[c] = e == 0 ? std::ldexp(static_cast<float>(m), -9)
                          : std::ldexp(1.0f + static_cast<float>(m) / 8.0f, static_cast<int>(e) - 7);
        }
        return t;
    }();
    return table;
}

constexpr std::array<float, 8> kE2m1{0.0f, 0.5f, 1.0f, 1.5f, 2.0f, 3.0f, 4.0f, 6.0f};

// Nearest entry of a strictly increasing table; ties go to the even index,
// which is round-half-to-even for these layouts (index parity = mantissa lsb).
// Magnitudes beyond the last entry saturate.
template <std::size_t N>
unsigned nearest_index(const std::array<float, N>& mags, double a) {
    if (a >= mags[N - 1]) {
        return N - 1;
    }
    const auto it = std::upper_bound(mags.begin(), mags.end(), a);
    const unsigned hi = static_cast<unsigned>(it - mags.begin());
    const unsigned lo = hi - 1;
    const double dl = a - mags[lo], dh = mags[hi] - a;
    if (dl < dh) return lo;
    if (dh < dl) return hi;
    return (lo % 2 == 0) ? lo : hi;
}

}  // namespace

namespace e4m3 {

float decode(std::uint8_t code) {
    const unsigned mag = code & 0x7F;
    if (mag == 0x7F) {
        return std::numeric_limits<float>::quiet_NaN();
    }
    const float v = e4m3_magnitudes()[mag];
    return (code & 0x80) ? -v : v;
}

std::uint8_t encode(double x) {
    if (std::isnan(x)) {
        return 0x7F;
    }
    const std::uint8_t sign = std::signbit(x) ? 0x80 : 0x00;
    return static_cast<std::uint8_t>(sign | nearest_index(e4m3_magnitudes(), std::fabs(x)));
}

}  // namespace e4m3

namespace e2m1 {

float decode(std::uint8_t code) {
    const float v = kE2m1[code & 7];
    return (code & 8) ? -v : v;
}

std::uint8_t encode(double x) {
    if (std::isnan(x)) {
        throw NumericError("e2m1: NaN input");
    }
    const std::uint8_t sign = std::signbit(x) ? 8 : 0;
    return static_cast<std::uint8_t>(sign | nearest_index(kE2m1, std::fabs(x)));
}

}  // namespace e2m1

float round_significand(double x, int bits) {
    if (x == 0.0 || !std::isfinite(x)) {
        return static_cast<float>(x);
    }
    int e = 0;
    const double m = std::frexp(x, &e);  // |m| in [0.5, 1)
    return static_cast<float>(std::ldexp(std::nearbyint(std::ldexp(m, bits)), e - bits));
}

std::vector<double> quant_grid(const QuantFormat& f) {
    f.validate();
    std::set<double> values;
    switch (f.kind) {
    case QuantKind::integer: {
        if (f.affine) {
            for (int q = 0; q < (1 << f.bits); ++q) values.insert(q);
        } else {
            const int m = (1 << (f.bits - 1)) - 1;
            for (int q = -m; q <= m; ++q) values.insert(q);
        }
        break;
    }
    case QuantKind::fp8_e4m3:
        for (unsigned c = 0; c < 256; ++c) {
            const float v = e4m3::decode(static_cast<std::uint8_t>(c));
            if (!std::isnan(v)) values.insert(v == 0.0f ? 0.0 : v);
        }
        break;
    case QuantKind::nvfp4:
        for (unsigned c = 0; c < 16; ++c) {
            const float v = e2m1::decode(static_cast<std::uint8_t>(c));
            values.insert(v == 0.0f ? 0.0 : v);
        }
        break;
    case QuantKind::bf16:
        throw ConfigError("quant_grid: bf16 grid is not enumerated");
    }
    return {values.begin(), values.end()};
}

}  // namespace kdlab::quant
