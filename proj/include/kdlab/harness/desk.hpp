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
#include <vector>

#include "kdlab/distill/trainer.hpp"
#include "kdlab/harness/experiment.hpp"
#include "kdlab/harness/synth.hpp"
#include "kdlab/logitstore/shard.hpp"
#include "kdlab/model/config.hpp"

namespace kdlab::harness {

/// A laptop-sized instance of the full pipeline: synthetic corpus, a teacher
/// pre-trained on labels, stored top-k teacher records, distilled students.
struct DeskConfig {
    SynthConfig corpus;
    std::size_t chunk_len = 64;
    std::size_t val_documents = 150;  // taken from the end of the corpus
    model::ModelConfig teacher;
    distill::TrainConfig teacher_train;
    std::size_t k = 32;
    std::uint64_t perm_seed = 7;
    std::size_t tokens_per_shard = 32768;
    model::ModelConfig student;
    distill::TrainConfig student_train;
};

/// Defaults sized so that one student trains in about a minute on one core.
DeskConfig desk_defaults();

struct DeskCorpus {
    std::vector<logitstore::TokenChunk> train;
    std::vector<logitstore::TokenChunk> val;
};

/// Generates the corpus text into `dir`, reads it back and packs it.
DeskCorpus make_desk_corpus(const DeskConfig& config, const std::filesystem::path& dir);

/// Label-only pre-training of the teacher on the training chunks.
distill::TrainResult train_teacher(const DeskConfig& config, const DeskCorpus& corpus,
                                   const std::filesystem::path& out_dir);

/// Stored teacher records for `chunks`.
logitstore::ShardManifest desk_teacher_gen(const DeskConfig& config, const model::ModelParams<float>& teacher,
                                           const std::vector<logitstore::TokenChunk>& chunks,
                                           const std::filesystem::path& out_dir);

/// A student distilled from `manifest` with the given loss mix and seed.
distill::TrainResult train_student(const DeskConfig& config, const logitstore::ShardManifest& manifest,
                                   const std::vector<logitstore::TokenChunk>& val, double lambda_kd,
                                   std::uint64_t seed, const std::filesystem::path& out_dir);

struct PipelineOutputs {
    std::filesystem::path teacher;   // final teacher checkpoint
    std::filesystem::path manifest;  // training records
    std::filesystem::path val_manifest;
    std::filesystem::path student;  // final student checkpoint
    std::filesystem::path report_csv;
    std::filesystem::path report_json;
    std::vector<std::filesystem::path> quantized;  // checkpoints written by the report
    Report report;
};

/// corpus -> pack -> teacher -> teacher-gen -> distill -> quantize -> report,
/// entirely under `dir`. `spec` supplies formats, methods, seeds and QAD
/// settings; its models and paths are filled in here.
PipelineOutputs run_desk_pipeline(const DeskConfig& config, ExperimentSpec spec, const std::filesystem::path& dir);

}  // namespace kdlab::harness
