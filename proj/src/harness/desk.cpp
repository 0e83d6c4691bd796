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

#include "kdlab/harness/desk.hpp"

#include <algorithm>

#include "kdlab/io.hpp"
#include "kdlab/logitstore/corpus.hpp"

namespace kdlab::harness {

DeskConfig desk_defaults() {
    DeskConfig c;
    c.corpus.documents = 2500;
    c.corpus.seed = 1;

    c.teacher.layers = 3;
    c.teacher.dim = 96;
    c.teacher.mlp_dim = 384;
    c.teacher.q_heads = 4;
    c.teacher.kv_heads = 2;
    c.teacher.seq_len = c.chunk_len;
    c.teacher_train.lambda_kd = 0.0;
    c.teacher_train.global_batch = 16;
    c.teacher_train.total_iters = 1200;
    c.teacher_train.warmup_iters = 30;
    c.teacher_train.decay_start_iter = 900;
    c.teacher_train.lr_peak = 3e-3;
    c.teacher_train.seed = 101;

    c.student.layers = 2;
    c.student.dim = 64;
    c.student.mlp_dim = 256;
    c.student.q_heads = 4;
    c.student.kv_heads = 2;
    c.student.seq_len = c.chunk_len;
    c.student_train.global_batch = 16;
    c.student_train.total_iters = 400;
    c.student_train.warmup_iters = 20;
    c.student_train.decay_start_iter = 300;
    c.student_train.lr_peak = 3e-3;
    // Every 25 iterations, so the last three checkpoints lie inside the decay phase.
    c.student_train.checkpoint_interval = 25;
    return c;
}

DeskCorpus make_desk_corpus(const DeskConfig& config, const std::filesystem::path& dir) {
    if (config.val_documents >= config.corpus.documents) {
        throw ConfigError("desk: val_documents must leave training documents");
    }
    write_texts(dir, synth_texts(config.corpus));
    const auto docs = logitstore::read_corpus_dir(dir);
    const auto split = docs.end() - static_cast<std::ptrdiff_t>(config.val_documents);
    DeskCorpus out;
    out.train = logitstore::pack_corpus(std::vector<logitstore::Document>(docs.begin(), split), config.chunk_len);
    out.val = logitstore::pack_corpus(std::vector<logitstore::Document>(split, docs.end()), config.chunk_len);
    return out;
}

distill::TrainResult train_teacher(const DeskConfig& config, const DeskCorpus& corpus,
                                   const std::filesystem::path& out_dir) {
    distill::ChunkSource source(corpus.train, static_cast<std::uint32_t>(config.teacher.vocab));
    distill::TrainConfig tc = config.teacher_train;
    tc.lambda_kd = 0.0;
    distill::TrainOptions opts;
    opts.out_dir = out_dir;
    return distill::train(config.teacher, source, tc, corpus.val, opts);
}

logitstore::ShardManifest desk_teacher_gen(const DeskConfig& config, const model::ModelParams<float>& teacher,
                                           const std::vector<logitstore::TokenChunk>& chunks,
                                           const std::filesystem::path& out_dir) {
    logitstore::GenerateOptions g;
    g.k = config.k;
    g.perm_seed = config.perm_seed;
    g.tokens_per_shard = config.tokens_per_shard;
    return logitstore::generate_logit_shards(teacher, chunks, g, out_dir);
}

distill::TrainResult train_student(const DeskConfig& config, const logitstore::ShardManifest& manifest,
                                   const std::vector<logitstore::TokenChunk>& val, double lambda_kd,
                                   std::uint64_t seed, const std::filesystem::path& out_dir) {
    distill::TrainConfig tc = config.student_train;
    tc.lambda_kd = lambda_kd;
    tc.seed = seed;
    distill::TrainOptions opts;
    opts.out_dir = out_dir;
    return distill::train(config.student, manifest, tc, val, opts);
}

PipelineOutputs run_desk_pipeline(const DeskConfig& config, ExperimentSpec spec, const std::filesystem::path& dir) {
    PipelineOutputs out;
    const auto corpus = make_desk_corpus(config, dir / "corpus");
    const auto teacher = train_teacher(config, corpus, dir / "teacher");
    out.teacher = teacher.checkpoints.back().path;
    desk_teacher_gen(config, teacher.params, corpus.train, dir / "logits");
    desk_teacher_gen(config, teacher.params, corpus.val, dir / "val_logits");
    out.manifest = dir / "logits" / "manifest.json";
    out.val_manifest = dir / "val_logits" / "manifest.json";
    const auto student = train_student(config, logitstore::load_manifest(out.manifest), corpus.val,
                                       config.student_train.lambda_kd, config.student_train.seed, dir / "student");
    out.student = student.checkpoints.back().path;

    spec.models = {{"student", {std::filesystem::relative(out.student, dir).string()}, 1}};
    spec.train_manifest = std::filesystem::relative(out.manifest, dir).string();
    spec.val_manifest = std::filesystem::relative(out.val_manifest, dir).string();
    spec.out_dir = "quantized";
    io::write_text(dir / "spec.json", nlohmann::json(spec).dump(2));
    out.report = run_experiment(spec, dir);
    out.report_csv = dir / "report.csv";
    out.report_json = dir / "report.json";
    io::write_text(out.report_csv, report_csv(out.report));
    io::write_text(out.report_json, report_json(out.report).dump(2));
    for (const auto& e : std::filesystem::directory_iterator(dir / "quantized")) out.quantized.push_back(e.path());
    std::sort(out.quantized.begin(), out.quantized.end());
    return out;
}

}  // namespace kdlab::harness
