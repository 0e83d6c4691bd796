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
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "kdlab/model/params.hpp"

namespace kdlab::model {

/// Dense checkpoint layout:
///   "KDFC" | u32 version (1) | u64 header length | JSON header |
///   f32 tensors in ModelParams::visit order | f32 extra tensors
/// The JSON header carries "config", free-form "meta", and the tensor table.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointFile {
    ModelParams<float> params;
    nlohmann::json meta;
    std::vector<Tensor<float>> extra;
};

std::vector<std::uint8_t> encode_checkpoint(const ModelParams<float>& params,
                                            const nlohmann::json& meta = nlohmann::json::object(),
                                            std::span<const Tensor<float>> extra = {});

CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& context);

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const nlohmann::json& meta = nlohmann::json::object(),
                     std::span<const Tensor<float>> extra = {});

CheckpointFile load_checkpoint(const std::filesystem::path& path);

/// Reads only the magic, version and JSON header.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace kdlab::model
