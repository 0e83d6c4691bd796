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

#include <filesystem>
#include <map>
#include <span>
#include <string>

#include <json.hpp>

#include "kdlab/logitstore/corpus.hpp"
#include "kdlab/model/params.hpp"
#include "kdlab/quant/gptq.hpp"
#include "kdlab/quant/tensor_quant.hpp"

namespace kdlab::quant {

/// A model whose projection weights are stored in `format` and whose other
/// tensors are bf16. `params` is the evaluable form: quantized tensors hold
/// their decoded values, the rest their bf16-rounded values.
struct QuantizedModel {
    QuantFormat format;
    model::ModelParams<float> params;
    std::map<std::string, QuantizedTensor> tensors;  // by ModelParams::visit name
};

/// Visit names of the quantized tensors: layers.<l>.{qkv,attn_out,up,down}.
std::vector<std::string> quantized_tensor_names(const model::ModelConfig& config);

using HessianMap = std::map<std::string, Tensor<double>>;

/// Damped input Hessians for every quantized tensor, from full-precision
/// forwards over `chunks`.
HessianMap calibration_hessians(const model::ModelParams<float>& params,
                                std::span<const logitstore::TokenChunk> chunks,
                                double damping = kHessianDamping);

QuantizedModel quantize_model_rtn(const model::ModelParams<float>& params, const QuantFormat& format);

/// GPTQ per tensor (independent Hessians, run in parallel).
QuantizedModel quantize_model_gptq(const model::ModelParams<float>& params, const QuantFormat& format,
                                   const HessianMap& hessians);

/// Quantized tensors at their storage size; everything else at 16 bits.
/// Equals the tensor payload of the checkpoint written by save_quantized.
std::uint64_t model_storage_bytes(const QuantizedModel& model);
/// All tensors at 16 bits.
std::uint64_t dense_storage_bytes(const model::ModelParams<float>& params);

/// Quantized checkpoint: "KDFC", version 2, JSON header (config, meta,
/// format, tensor table), then per tensor in visit order either raw bf16
/// values or a record of packed codes followed by scales and offsets as
/// little-endian arrays at their storage width.
inline constexpr std::uint32_t kQuantCheckpointVersion = 2;

void save_quantized(const std::filesystem::path& path, const QuantizedModel& model,
                    const nlohmann::json& meta = nlohmann::json::object());
QuantizedModel load_quantized(const std::filesystem::path& path, nlohmann::json* meta = nullptr);
/// Bytes after the JSON header of a quantized checkpoint.
std::uint64_t quantized_payload_bytes(const std::filesystem::path& path);

/// 100 * mean(quant) / mean(baseline). Throws on size mismatch or a zero
/// baseline mean.
double recovery(std::span<const double> baseline, std::span<const double> quant);

}  // namespace kdlab::quant
