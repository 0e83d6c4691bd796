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

// Command-line driver for the desk pipeline:
//   make-corpus -> pretrain -> teacher-gen -> distill -> quantize -> report
// plus cost, eval and pareto utilities. Every step reads and writes files,
// so steps can be rerun or swapped independently.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>

#include "kdlab/distill/trainer.hpp"
#include "kdlab/harness/cost.hpp"
#include "kdlab/harness/desk.hpp"
#include "kdlab/harness/experiment.hpp"
#include "kdlab/harness/pareto.hpp"
#include "kdlab/harness/synth.hpp"
#include "kdlab/harness/tasks.hpp"
#include "kdlab/io.hpp"
#include "kdlab/model/checkpoint.hpp"
#include "kdlab/quant/fusion.hpp"
#include "kdlab/quant/ptq.hpp"
#include "kdlab/quant/qad.hpp"
#include "kdlab/quant/ste.hpp"

namespace fs = std::filesystem;
using namespace kdlab;

namespace {

struct ModelFlags {
    std::string config_file;
    model::ModelConfig config;

    void add(CLI::App* app, const model::ModelConfig& defaults) {
        config = defaults;
        app->add_option("--model-config", config_file, "model config JSON (overrides the flags below)");
        app->add_option("--layers", config.layers);
        app->add_option("--dim", config.dim);
        app->add_option("--mlp-dim", config.mlp_dim);
        app->add_option("--heads", config.q_heads);
        app->add_option("--kv-heads", config.kv_heads);
        app->add_option("--seq-len", config.seq_len, "also the chunk length");
        app->add_option("--activation", config.activation);
    }
    model::ModelConfig get() const {
        if (config_file.empty()) return config;
        return nlohmann::json::parse(io::read_text(config_file)).get<model::ModelConfig>();
    }
};

struct TrainFlags {
    distill::TrainConfig config;

    void add(CLI::App* app, const distill::TrainConfig& defaults) {
        config = defaults;
        app->add_option("--iters", config.total_iters);
        app->add_option("--warmup", config.warmup_iters);
        app->add_option("--decay-start", config.decay_start_iter);
        app->add_option("--batch", config.global_batch, "chunks per iteration");
        app->add_option("--lr", config.lr_peak);
        app->add_option("--min-lr-ratio", config.lr_min_ratio);
        app->add_option("--weight-decay", config.weight_decay);
        app->add_option("--optimizer", config.optimizer);
        app->add_option("--seed", config.seed);
        app->add_option("--checkpoint-interval", config.checkpoint_interval);
        app->add_option("--log-interval", config.log_interval);
        app->add_option("--eval-interval", config.eval_interval);
    }
};

/// Corpus documents split into training and held-out chunks.
harness::DeskCorpus load_corpus(const fs::path& dir, std::size_t chunk_len, std::size_t val_docs) {
    const auto docs = logitstore::read_corpus_dir(dir);
    if (val_docs >= docs.size()) throw ConfigError("--val-docs leaves no training documents");
    const auto split = docs.end() - static_cast<std::ptrdiff_t>(val_docs);
    harness::DeskCorpus c;
    c.train = logitstore::pack_corpus(std::vector<logitstore::Document>(docs.begin(), split), chunk_len);
    if (val_docs > 0) {
        c.val = logitstore::pack_corpus(std::vector<logitstore::Document>(split, docs.end()), chunk_len);
    }
    return c;
}

void print_log(const distill::MetricsRow& r) { std::cout << distill::format_metrics_row(r) << std::endl; }

/// Dense or quantized checkpoint, as evaluable params plus eval hooks.
struct Loaded {
    model::ModelParams<float> params;
    model::ForwardHooks<float> hooks;
    std::string format = "fp32";
};

Loaded load_any(const fs::path& path) {
    Loaded l;
    const auto header = io::read_file(path);
    io::ByteReader r(header, path.string());
    r.expect_magic("KDFC");
    if (r.get<std::uint32_t>() == quant::kQuantCheckpointVersion) {
        auto q = quant::load_quantized(path);
        l.params = std::move(q.params);
        l.hooks = quant::eval_hooks(q.format);
        l.format = quant::format_name(q.format);
    } else {
        l.params = model::load_checkpoint(path).params;
    }
    return l;
}

/// Checkpoint files named by --in: files as given, directories expanded to
/// their ckpt-*.kdfc files in iteration order.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
    std::vector<fs::path> out;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::directory_iterator(in)) {
                const auto name = e.path().filename().string();
                if (name.starts_with("ckpt-") && name.ends_with(".kdfc")) found.push_back(e.path());
            }
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else {
            out.emplace_back(in);
        }
    }
    if (out.empty()) throw ConfigError("--in names no checkpoints");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kdlab: pre-training distillation and quantization laboratory"};
    app.require_subcommand(1);
    const auto desk = harness::desk_defaults();

    // make-corpus
    auto* mk = app.add_subcommand("make-corpus", "write a synthetic text corpus");
    std::string mk_out;
    harness::SynthConfig synth = desk.corpus;
    mk->add_option("--out", mk_out)->required();
    mk->add_option("--documents", synth.documents);
    mk->add_option("--task-rate", synth.task_rate);
    mk->add_option("--lexicon", synth.lexicon);
    mk->add_option("--seed", synth.seed);

    // pretrain
    auto* pt = app.add_subcommand("pretrain", "train a model on labels only (the teacher)");
    std::string pt_corpus, pt_out;
    std::size_t pt_val_docs = desk.val_documents;
    ModelFlags pt_model;
    TrainFlags pt_train;
    pt->add_option("--corpus", pt_corpus)->required();
    pt->add_option("--out", pt_out)->required();
    pt->add_option("--val-docs", pt_val_docs, "held-out documents at the end of the corpus");
    pt_model.add(pt, desk.teacher);
    pt_train.add(pt, desk.teacher_train);

    // teacher-gen
    auto* tg = app.add_subcommand("teacher-gen", "store top-k teacher records as gzip shards");
    std::string tg_teacher, tg_corpus, tg_out, tg_split = "train";
    std::size_t tg_val_docs = desk.val_documents;
    logitstore::GenerateOptions gen;
    gen.k = desk.k;
    gen.perm_seed = desk.perm_seed;
    gen.tokens_per_shard = desk.tokens_per_shard;
    tg->add_option("--teacher", tg_teacher)->required();
    tg->add_option("--corpus", tg_corpus)->required();
    tg->add_option("--out", tg_out)->required();
    tg->add_option("--split", tg_split, "train | val | all")->check(CLI::IsMember({"train", "val", "all"}));
    tg->add_option("--val-docs", tg_val_docs);
    tg->add_option("--k", gen.k);
    tg->add_option("--perm-seed", gen.perm_seed);
    tg->add_option("--tokens-per-shard", gen.tokens_per_shard);

    // distill
    auto* ds = app.add_subcommand("distill", "train a student from stored teacher records");
    std::string ds_manifest, ds_val, ds_out, ds_resume;
    double ds_lambda = 0.9;
    std::size_t ds_stop = 0;
    ModelFlags ds_model;
    TrainFlags ds_train;
    ds->add_option("--manifest", ds_manifest)->required();
    ds->add_option("--val-manifest", ds_val, "held-out records for validation loss");
    ds->add_option("--out", ds_out)->required();
    ds->add_option("--lambda", ds_lambda, "weight of the KL term");
    ds->add_option("--resume", ds_resume, "checkpoint to continue from");
    ds->add_option("--stop-at", ds_stop, "stop after this many iterations");
    ds_model.add(ds, desk.student);
    ds_train.add(ds, desk.student_train);

    // quantize
    auto* qz = app.add_subcommand("quantize", "post-training quantization or QAD");
    std::string qz_method = "rtn", qz_format = "int4g64", qz_out, qz_calib, qz_qad_manifest;
    std::vector<std::string> qz_in;
    bool qz_fuse = false;
    std::size_t qz_avg = 1, qz_calib_chunks = 32;
    double qz_clip = 1.0;
    quant::QadConfig qad;
    qz->add_option("--method", qz_method)->check(CLI::IsMember({"rtn", "gptq", "qad"}));
    qz->add_option("--format", qz_format, "int{2,3,4,6}g<G>[s] | fp8 | nvfp4 | nvfp4a16 | bf16");
    qz->add_flag("--fuse-norms", qz_fuse, "equalize QKV/up input columns into the norm gains first");
    qz->add_option("--avg-last", qz_avg, "average the last N input checkpoints");
    qz->add_option("--in", qz_in, "checkpoint files or training directories")->required();
    qz->add_option("--out", qz_out)->required();
    qz->add_option("--clip-ratio", qz_clip);
    qz->add_option("--calib", qz_calib, "manifest whose chunks calibrate GPTQ");
    qz->add_option("--calib-chunks", qz_calib_chunks);
    qz->add_option("--qad-manifest", qz_qad_manifest, "teacher records for QAD");
    qz->add_option("--qad-steps", qad.steps);
    qz->add_option("--qad-batch", qad.global_batch);
    qz->add_option("--qad-lr", qad.lr_peak);
    qz->add_option("--qad-lambda", qad.lambda_kd);
    qz->add_flag("!--pass-through-ste", qad.clipped_ste, "let gradients through clipped weights");

    // cost
    auto* co = app.add_subcommand("cost", "training / logits-generation MACs (3NT / 1NT)");
    double co_n = 0, co_t = 0;
    std::string co_mode = "train";
    co->add_option("--params", co_n, "compute size N; omit to print the published comparison");
    co->add_option("--tokens", co_t);
    co->add_option("--mode", co_mode)->check(CLI::IsMember({"train", "forward"}));

    // eval
    auto* ev = app.add_subcommand("eval", "validation loss and task accuracy of a checkpoint");
    std::string ev_ckpt, ev_val, ev_suite = "desk";
    std::size_t ev_items = 200, ev_val_chunks = 0;
    ev->add_option("--ckpt", ev_ckpt)->required();
    ev->add_option("--val-manifest", ev_val);
    ev->add_option("--val-chunks", ev_val_chunks);
    ev->add_option("--suite", ev_suite);
    ev->add_option("--items", ev_items);

    // pareto
    auto* pa = app.add_subcommand("pareto", "frontier of a report");
    std::string pa_report, pa_cost = "storage_bytes", pa_quality = "neg_val_loss", pa_out, pa_series;
    pa->add_option("--report", pa_report, "report JSON")->required();
    pa->add_option("--cost", pa_cost)->check(CLI::IsMember({"storage_bytes", "macs"}));
    pa->add_option("--quality", pa_quality)->check(CLI::IsMember({"neg_val_loss", "task_macro"}));
    pa->add_option("--out", pa_out, "frontier CSV (default: stdout)");
    pa->add_option("--series", pa_series, "all points with a dominated flag, for plotting");

    // report
    auto* rp = app.add_subcommand("report", "run an experiment grid");
    std::string rp_spec, rp_csv, rp_json;
    rp->add_option("--spec", rp_spec)->required();
    rp->add_option("--csv", rp_csv);
    rp->add_option("--json", rp_json);

    CLI11_PARSE(app, argc, argv);

    try {
        if (mk->parsed()) {
            harness::write_texts(mk_out, harness::synth_texts(synth));
            std::cout << "wrote " << synth.documents << " documents to " << mk_out << "\n";
        } else if (pt->parsed()) {
            const auto cfg = pt_model.get();
            const auto corpus = load_corpus(pt_corpus, cfg.seq_len, pt_val_docs);
            distill::ChunkSource source(corpus.train, static_cast<std::uint32_t>(cfg.vocab));
            auto tc = pt_train.config;
            tc.lambda_kd = 0.0;
            distill::TrainOptions opts;
            opts.out_dir = pt_out;
            opts.on_log = print_log;
            const auto r = distill::train(cfg, source, tc, corpus.val, opts);
            std::cout << "final checkpoint " << r.checkpoints.back().path.string() << "\n";
        } else if (tg->parsed()) {
            const auto teacher = model::load_checkpoint(tg_teacher).params;
            const std::size_t val_docs = tg_split == "all" ? 0 : tg_val_docs;
            const auto corpus = load_corpus(tg_corpus, teacher.config.seq_len, val_docs);
            const auto& chunks = tg_split == "val" ? corpus.val : corpus.train;
            const auto m = logitstore::generate_logit_shards(teacher, chunks, gen, tg_out);
            std::cout << m.shards.size() << " shards, " << m.total_tokens() << " tokens, "
                      << logitstore::record_payload_bytes(m.k) << " record bytes per token\n";
        } else if (ds->parsed()) {
            const auto manifest = logitstore::load_manifest(ds_manifest);
            std::vector<logitstore::TokenChunk> val;
            if (!ds_val.empty()) val = harness::manifest_chunks(logitstore::load_manifest(ds_val));
            auto tc = ds_train.config;
            tc.lambda_kd = ds_lambda;
            distill::TrainOptions opts;
            opts.out_dir = ds_out;
            opts.on_log = print_log;
            if (!ds_resume.empty()) opts.resume_from = fs::path(ds_resume);
            if (ds_stop > 0) opts.stop_at = ds_stop;
            const auto r = distill::train(ds_model.get(), manifest, tc, val, opts);
            std::cout << "final checkpoint " << r.checkpoints.back().path.string() << "\n";
        } else if (qz->parsed()) {
            auto fmt = quant::parse_format(qz_format);
            fmt.clip_ratio = qz_clip;
            fmt.validate();
            const auto inputs = expand_inputs(qz_in);
            if (qz_avg == 0 || qz_avg > inputs.size()) throw ConfigError("--avg-last exceeds the inputs");
            std::vector<model::ModelParams<float>> ckpts;
            for (std::size_t i = inputs.size() - qz_avg; i < inputs.size(); ++i) {
                ckpts.push_back(model::load_checkpoint(inputs[i]).params);
            }
            auto params = ckpts.size() == 1 ? std::move(ckpts[0]) : distill::weight_average(ckpts);
            if (qz_fuse) params = quant::fuse_norms(params);
            quant::QuantizedModel q;
            if (qz_method == "rtn") {
                q = quant::quantize_model_rtn(params, fmt);
            } else if (qz_method == "gptq") {
                if (qz_calib.empty()) throw ConfigError("gptq needs --calib");
                const auto calib = harness::manifest_chunks(logitstore::load_manifest(qz_calib), qz_calib_chunks);
                q = quant::quantize_model_gptq(params, fmt, quant::calibration_hessians(params, calib));
            } else {
                if (qz_qad_manifest.empty()) throw ConfigError("qad needs --qad-manifest");
                distill::ManifestSource source(logitstore::load_manifest(qz_qad_manifest));
                q = quant::qad(params, fmt, source, qad, [](std::size_t s, double loss) {
                        if (s % 10 == 0) std::printf("qad step %zu loss %.6f\n", s, loss);
                    }).deliverable;
            }
            quant::save_quantized(qz_out, q,
                                  {{"method", qz_method}, {"fuse_norms", qz_fuse}, {"avg_last", qz_avg}});
            std::cout << "wrote " << qz_out << ": " << quant::model_storage_bytes(q) << " bytes vs "
                      << quant::dense_storage_bytes(params) << " at 16 bits\n";
        } else if (co->parsed()) {
            if (co_n > 0) {
                std::printf("%.3e FLOPs (MAC count)\n",
                            harness::estimate_cost(co_n, co_t, harness::parse_cost_mode(co_mode)));
            } else {
                const auto rows = harness::published_costs();
                std::printf("%-34s %9s %9s %8s %12s %9s %7s\n", "stage", "N", "tokens", "mode",
                            "FLOPs(MAC)", "printed", "rel");
                for (const auto& r : rows) {
                    std::printf("%-34s %9.2e %9.2e %8s %12.3e %9.1e %+6.1f%%\n", r.entry.label.c_str(),
                                r.entry.n_params, r.entry.tokens, harness::cost_mode_name(r.entry.mode),
                                r.entry.macs, r.printed, 100 * (r.entry.macs / r.printed - 1));
                }
                const double fam = harness::family_cost(rows), teach = harness::teacher_cost(rows);
                std::printf("family total %.3e = %.1f%% of teacher pre-training\n", fam, 100 * fam / teach);
            }
        } else if (ev->parsed()) {
            const auto l = load_any(ev_ckpt);
            auto suite = harness::parse_suite(ev_suite);
            suite.items = ev_items;
            nlohmann::json out{{"checkpoint", ev_ckpt}, {"format", l.format}};
            if (!ev_val.empty()) {
                const auto val = harness::manifest_chunks(logitstore::load_manifest(ev_val), ev_val_chunks);
                out["val_loss"] = distill::validation_loss(l.params, val, &l.hooks);
            }
            const auto scores = harness::eval_tasks(l.params, suite, &l.hooks);
            for (const auto& s : scores) out["tasks"][harness::task_name(s.kind)] = s.accuracy();
            out["task_macro"] = harness::macro_accuracy(scores);
            std::cout << out.dump(2) << "\n";
        } else if (pa->parsed()) {
            const auto report = harness::report_from_json(nlohmann::json::parse(io::read_text(pa_report)));
            std::vector<harness::ParetoPoint> pts;
            for (const auto& r : report.rows) {
                if (r.status != "ok") continue;
                pts.push_back({r.label, pa_cost == "macs" ? r.macs : static_cast<double>(r.storage_bytes),
                               pa_quality == "task_macro" ? r.task_macro : -r.val_loss, false});
            }
            const auto front = harness::pareto_front(pts);
            std::string csv = "label,cost,quality\n";
            for (const auto& p : front) csv += p.label + "," + std::to_string(p.cost) + "," + std::to_string(p.quality) + "\n";
            if (pa_out.empty()) {
                std::cout << csv;
            } else {
                io::write_text(pa_out, csv);
            }
            if (!pa_series.empty()) {
                std::string s = "label,cost,quality,dominated\n";
                for (const auto& p : harness::mark_dominated(pts)) {
                    s += p.label + "," + std::to_string(p.cost) + "," + std::to_string(p.quality) + "," +
                         (p.dominated ? "1" : "0") + "\n";
                }
                io::write_text(pa_series, s);
            }
        } else if (rp->parsed()) {
            const auto spec = harness::load_spec(rp_spec);
            const auto report = harness::run_experiment(spec, fs::path(rp_spec).parent_path(),
                                                        [](const harness::ReportRow& r) {
                                                            std::cerr << r.label << ": " << r.status << "\n";
                                                        });
            const auto csv = harness::report_csv(report);
            if (!rp_csv.empty()) io::write_text(rp_csv, csv);
            if (!rp_json.empty()) io::write_text(rp_json, harness::report_json(report).dump(2));
            if (rp_csv.empty() && rp_json.empty()) std::cout << csv;
            return report.ok() ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "kdlab: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
