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
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdlab/logitstore/shard.hpp"
#include "kdlab/model/params.hpp"
#include "kdlab/quant/qad.hpp"

namespace kdlab::harness {

/// A model under test. With several checkpoints and avg_last > 1, the last
/// avg_last of them are averaged before quantization.
struct ModelSpec {
    std::string label;
    std::vector<std::string> checkpoints;
    std::size_t avg_last = 1;
};

/// Grid: models x formats x methods x seeds. "bf16" is the 16-bit baseline
/// and yields a single row per model whatever the methods and seeds.
/// Relative paths resolve against the spec file's directory.
struct ExperimentSpec {
    std::vector<ModelSpec> models;
    std::vector<std::string> formats;
    std::vector<std::string> methods;  // rtn | gptq | qad
    std::vector<std::uint64_t> seeds{0};
    std::string suite = "desk";
    std::size_t suite_items = 200;
    std::string val_manifest;    // held-out chunks for val_loss
    std::size_t val_chunks = 0;  // 0: all
    std::string train_manifest;  // calibration inputs and QAD targets
    std::size_t calib_chunks = 32;
    bool fuse_norms = false;
    quant::QadConfig qad;
    std::string out_dir;  // when set, quantized checkpoints are written here
};

void to_json(nlohmann::json& j, const ExperimentSpec& s);
void from_json(const nlohmann::json& j, ExperimentSpec& s);

ExperimentSpec load_spec(const std::filesystem::path& path);

struct ReportRow {
    std::string label;  // model/format/method/seed
    std::string model;
    std::string format;
    std::string method;
    std::uint64_t seed = 0;
    std::uint64_t storage_bytes = 0;
    double macs = 0;  // per token, forward
    double val_loss = 0;
    double gap = 0;  // val_loss minus the unquantized model's
    double task_macro = 0;
    double recovery = 0;  // percent of the unquantized task macro
    std::string status = "ok";
};

inline constexpr const char* kReportHeader =
    "label,model,format,method,seed,storage_bytes,macs,val_loss,gap,task_macro,recovery,status";

struct Report {
    std::vector<ReportRow> rows;
    bool ok() const;
};

std::string report_csv(const Report& report);
nlohmann::json report_json(const Report& report);
Report report_from_json(const nlohmann::json& j);

/// Chunks stored in a manifest, in file order; max_chunks 0 reads all.
std::vector<logitstore::TokenChunk> manifest_chunks(const logitstore::ShardManifest& manifest,
                                                    std::size_t max_chunks = 0);

/// Stream position (as ManifestSource::restore expects) of the chunk with
/// this global index, modulo the manifest size.
nlohmann::json manifest_position(const logitstore::ShardManifest& manifest, std::uint64_t chunk_index);

/// Runs the grid in declaration order. A failing row is reported with
/// status "error: ..." and the remaining rows still run. Reruns of the
/// same spec give bit-identical reports.
Report run_experiment(const ExperimentSpec& spec, const std::filesystem::path& base_dir,
                      const std::function<void(const ReportRow&)>& on_row = {});

}  // namespace kdlab::harness
