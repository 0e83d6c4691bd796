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

#include "kdlab/quant/tensor_quant.hpp"

#include <algorithm>
#include <cmath>

#include "kdlab/common.hpp"

namespace kdlab::quant {

namespace {

constexpr double kMinFp16Scale = 5.9604644775390625e-08;  // 2^-24, smallest fp16 subnormal
constexpr int kScaleBits = 11;
// Beyond these magnitudes (half a step past the top value) rounding would
// have left the grid, so the value counts as clipped.
constexpr double kE4m3ClipAt = 464.0;
constexpr double kE2m1ClipAt = 7.0;

float fp16_scale(double r) {
    return static_cast<float>(std::max(round_to_fp16(r), kMinFp16Scale));
}

void require_finite(const Tensor<float>& t, const char* what) {
    if (!t.all_finite()) {
        throw NumericError(std::string(what) + ": non-finite input");
    }
}

}  // namespace

QuantParams QuantParams::choose(const Tensor<float>& w, const QuantFormat& format) {
    format.validate();
    if (w.rank() != 2) {
        throw Error("quantize: expected a matrix, got shape " + numerics::shape_string(w.shape()));
    }
    require_finite(w, "quantize");
    QuantParams p;
    p.format_ = format;
    p.rows_ = w.rows();
    p.cols_ = w.cols();
    const double c = format.clip_ratio;
    switch (format.kind) {
    case QuantKind::integer: {
        const std::size_t g = format.group_size;
        p.groups_ = (p.cols_ + g - 1) / g;
        const bool padded = p.cols_ % g != 0;
        const double levels = static_cast<double>((1u << format.bits) - 1);
        const double qmax = static_cast<double>((1u << (format.bits - 1)) - 1);
        for (std::size_t r = 0; r < p.rows_; ++r) {
            const auto row = w.row(r);
            for (std::size_t k = 0; k < p.groups_; ++k) {
                const std::size_t b = k * g, e = std::min(b + g, p.cols_);
                double mn = row[b], mx = row[b];
                for (std::size_t j = b; j < e; ++j) {
                    mn = std::min<double>(mn, row[j]);
                    mx = std::max<double>(mx, row[j]);
                }
                if (padded && e - b < g) {
                    mn = std::min(mn, 0.0);
                    mx = std::max(mx, 0.0);
                }
                if (format.affine) {
                    mn *= c;
                    mx *= c;
                    p.offsets.push_back(static_cast<float>(round_to_fp16(mn)));
                    p.scales.push_back(mx > mn ? fp16_scale((mx - mn) / levels) : 1.0f);
                } else {
                    const double a = std::max(std::fabs(mn), std::fabs(mx)) * c;
                    p.scales.push_back(a > 0.0 ? fp16_scale(a / qmax) : 1.0f);
                }
            }
        }
        break;
    }
    case QuantKind::fp8_e4m3: {
        p.groups_ = 1;
        for (std::size_t r = 0; r < p.rows_; ++r) {
            double a = 0.0;
            for (float v : w.row(r)) a = std::max<double>(a, std::fabs(v));
            a *= c;
            p.scales.push_back(a > 0.0 ? round_significand(a / e4m3::kMax, kScaleBits) : 1.0f);
        }
        break;
    }
    case QuantKind::nvfp4: {
        p.groups_ = (p.cols_ + 15) / 16;
        double amax = 0.0;
        for (float v : w.values()) amax = std::max<double>(amax, std::fabs(v));
        p.global_scale = amax > 0.0 ? round_significand(amax / (e4m3::kMax * e2m1::kMax), kScaleBits) : 1.0f;
        for (std::size_t r = 0; r < p.rows_; ++r) {
            const auto row = w.row(r);
            for (std::size_t k = 0; k < p.groups_; ++k) {
                double a = 0.0;
                for (std::size_t j = k * 16; j < std::min(k * 16 + 16, p.cols_); ++j) {
                    a = std::max<double>(a, std::fabs(row[j]));
                }
                if (a == 0.0) {
                    p.scales.push_back(1.0f);
                    continue;
                }
                // Block scales stay in the normal E4M3 range so that
                // re-quantizing decoded values selects the same scale.
                const float bs = e4m3::decode(e4m3::encode(a * c / (e2m1::kMax * p.global_scale)));
                p.scales.push_back(std::max(bs, e4m3::kMinNormal));
            }
        }
        break;
    }
    case QuantKind::bf16:
        p.groups_ = 0;
        break;
    }
    return p;
}

QuantParams QuantParams::choose_activation(const Tensor<float>& x, const QuantFormat& format) {
    if (format.kind == QuantKind::nvfp4) {
        QuantFormat f = format;
        f.clip_ratio = 1.0;
        return choose(x, f);
    }
    if (format.kind != QuantKind::fp8_e4m3) {
        throw ConfigError("activation quantization is defined for fp8 and nvfp4 only");
    }
    require_finite(x, "activation quantize");
    QuantParams p;
    p.format_ = format;
    p.rows_ = x.rows();
    p.cols_ = x.cols();
    p.groups_ = 1;
    p.per_tensor_ = true;
    double a = 0.0;
    for (float v : x.values()) a = std::max<double>(a, std::fabs(v));
    p.scales.push_back(a > 0.0 ? round_significand(a / e4m3::kMax, kScaleBits) : 1.0f);
    return p;
}

QuantParams QuantParams::from_parts(const QuantFormat& format, std::size_t rows, std::size_t cols,
                                    std::vector<float> scales, std::vector<float> offsets,
                                    float global_scale) {
    format.validate();
    QuantParams p;
    p.format_ = format;
    p.rows_ = rows;
    p.cols_ = cols;
    std::size_t want_scales = 0, want_offsets = 0;
    switch (format.kind) {
    case QuantKind::integer:
        p.groups_ = (cols + format.group_size - 1) / format.group_size;
        want_scales = rows * p.groups_;
        want_offsets = format.affine ? want_scales : 0;
        break;
    case QuantKind::fp8_e4m3:
        p.groups_ = 1;
        want_scales = rows;
        break;
    case QuantKind::nvfp4:
        p.groups_ = (cols + 15) / 16;
        want_scales = rows * p.groups_;
        break;
    case QuantKind::bf16:
        break;
    }
    if (scales.size() != want_scales || offsets.size() != want_offsets) {
        throw IoError("quantized tensor: scale table has the wrong size");
    }
    for (float s : scales) {
        if (!(s > 0.0f) || !std::isfinite(s)) {
            throw IoError("quantized tensor: scales must be finite and positive");
        }
    }
    p.scales = std::move(scales);
    p.offsets = std::move(offsets);
    p.global_scale = global_scale;
    return p;
}

std::size_t QuantParams::scale_index(std::size_t row, std::size_t col) const {
    switch (format_.kind) {
    case QuantKind::integer: return row * groups_ + col / format_.group_size;
    case QuantKind::fp8_e4m3: return per_tensor_ ? 0 : row;
    case QuantKind::nvfp4: return row * groups_ + col / 16;
    case QuantKind::bf16: return 0;
    }
    return 0;
}

std::uint16_t QuantParams::encode(std::size_t row, std::size_t col, float x, bool* clipped) const {
    bool clip = false;
    std::uint16_t code = 0;
    switch (format_.kind) {
    case QuantKind::integer: {
        const std::size_t i = scale_index(row, col);
        const double s = scales[i];
        if (format_.affine) {
            const double top = static_cast<double>((1u << format_.bits) - 1);
            double q = std::nearbyint((static_cast<double>(x) - offsets[i]) / s);
            clip = q < 0.0 || q > top;
            q = std::clamp(q, 0.0, top);
            code = static_cast<std::uint16_t>(q);
        } else {
            const double m = static_cast<double>((1u << (format_.bits - 1)) - 1);
            double q = std::nearbyint(static_cast<double>(x) / s);
            clip = std::fabs(q) > m;
            q = std::clamp(q, -m, m);
            code = static_cast<std::uint16_t>(static_cast<int>(q) + (1 << (format_.bits - 1)));
        }
        break;
    }
    case QuantKind::fp8_e4m3: {
        const double u = static_cast<double>(x) / scales[scale_index(row, col)];
        clip = std::fabs(u) > kE4m3ClipAt;
        code = e4m3::encode(u);
        break;
    }
    case QuantKind::nvfp4: {
        const double u = static_cast<double>(x) /
                         (static_cast<double>(scales[scale_index(row, col)]) * global_scale);
        clip = std::fabs(u) > kE2m1ClipAt;
        code = e2m1::encode(u);
        break;
    }
    case QuantKind::bf16:
        code = bf16_bits(x);
        break;
    }
    if (clipped) *clipped = clip;
    return code;
}

float QuantParams::decode(std::size_t row, std::size_t col, std::uint16_t code) const {
    switch (format_.kind) {
    case QuantKind::integer: {
        const std::size_t i = scale_index(row, col);
        if (format_.affine) {
            return offsets[i] + static_cast<float>(code) * scales[i];
        }
        return static_cast<float>(static_cast<int>(code) - (1 << (format_.bits - 1))) * scales[i];
    }
    case QuantKind::fp8_e4m3:
        return e4m3::decode(static_cast<std::uint8_t>(code)) * scales[scale_index(row, col)];
    case QuantKind::nvfp4:
        return e2m1::decode(static_cast<std::uint8_t>(code)) * (scales[scale_index(row, col)] * global_scale);
    case QuantKind::bf16:
        return bf16_from_bits(code);
    }
    return 0.0f;
}

QuantizedTensor quantize_rtn(const Tensor<float>& w, const QuantFormat& format) {
    QuantizedTensor q{QuantParams::choose(w, format), {}};
    q.codes.resize(w.size());
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t c = 0; c < w.cols(); ++c) {
            q.codes[r * w.cols() + c] = q.params.encode(r, c, w.at(r, c));
        }
    }
    return q;
}

Tensor<float> dequantize(const QuantizedTensor& q) {
    Tensor<float> out(q.shape());
    const std::size_t cols = q.params.cols();
    for (std::size_t r = 0; r < q.params.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out.at(r, c) = q.params.decode(r, c, q.codes[r * cols + c]);
        }
    }
    return out;
}

Tensor<float> fake_quant(const Tensor<float>& w, const QuantFormat& format) {
    return dequantize(quantize_rtn(w, format));
}

Tensor<float> fake_quant(const Tensor<float>& w, const QuantFormat& format, std::vector<bool>& clipped) {
    const QuantParams p = QuantParams::choose(w, format);
    Tensor<float> out(w.shape());
    clipped.assign(w.size(), false);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t c = 0; c < w.cols(); ++c) {
            bool clip = false;
            out.at(r, c) = p.decode(r, c, p.encode(r, c, w.at(r, c), &clip));
            clipped[r * w.cols() + c] = clip;
        }
    }
    return out;
}

Tensor<float> fake_quant_activation(const Tensor<float>& x, const QuantFormat& format) {
    const QuantParams p = QuantParams::choose_activation(x, format);
    Tensor<float> out(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out.at(r, c) = p.decode(r, c, p.encode(r, c, x.at(r, c)));
        }
    }
    return out;
}

std::vector<std::uint8_t> pack_codes(std::span<const std::uint16_t> codes, unsigned bits) {
    if (bits == 0 || bits > 16) {
        throw Error("pack_codes: bits must be in [1, 16]");
    }
    std::vector<std::uint8_t> out((codes.size() * bits + 7) / 8, 0);
    std::size_t bit = 0;
    for (std::uint16_t c : codes) {
        if (bits < 16 && (c >> bits) != 0) {
            throw Error("pack_codes: code does not fit in " + std::to_string(bits) + " bits");
        }
        for (unsigned b = 0; b < bits; ++b, ++bit) {
            if ((c >> b) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
        }
    }
    return out;
}

std::vector<std::uint16_t> unpack_codes(std::span<const std::uint8_t> packed, unsigned bits,
                                        std::size_t count) {
    if (packed.size() != (count * bits + 7) / 8) {
        throw IoError("unpack_codes: packed size does not match code count");
    }
    std::vector<std::uint16_t> out(count, 0);
    std::size_t bit = 0;
    for (auto& c : out) {
        for (unsigned b = 0; b < bits; ++b, ++bit) {
            if ((packed[bit / 8] >> (bit % 8)) & 1u) c = static_cast<std::uint16_t>(c | (1u << b));
        }
    }
    return out;
}

std::uint64_t storage_bytes(const QuantizedTensor& q) {
    const auto& f = q.params.format();
    std::uint64_t bytes = (q.codes.size() * f.code_bits() + 7) / 8;
    switch (f.kind) {
    case QuantKind::integer: bytes += 2 * (q.params.scales.size() + q.params.offsets.size()); break;
    case QuantKind::fp8_e4m3: bytes += 4 * q.params.scales.size(); break;
    case QuantKind::nvfp4: bytes += q.params.scales.size() + 4; break;
    case QuantKind::bf16: break;
    }
    return bytes;
}

}  // namespace kdlab::quant
