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

#include "kdlab/harness/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>

#include "kdlab/common.hpp"
#include "kdlab/distill/trainer.hpp"
#include "kdlab/harness/cost.hpp"
#include "kdlab/harness/tasks.hpp"
#include "kdlab/io.hpp"
#include "kdlab/model/checkpoint.hpp"
#include "kdlab/quant/fusion.hpp"
#include "kdlab/quant/ste.hpp"

namespace kdlab::harness {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Everything about one model that is shared by its rows.
struct Prepared {
    model::ModelParams<float> params;
    double val_loss = 0;
    double task_macro = 0;
    double macs = 0;
};

}  // namespace

void to_json(nlohmann::json& j, const ExperimentSpec& s) {
    nlohmann::json models = nlohmann::json::array();
    for (const auto& m : s.models) {
        models.push_back({{"label", m.label}, {"checkpoints", m.checkpoints}, {"avg_last", m.avg_last}});
    }
    j = {{"models", models},
         {"formats", s.formats},
         {"methods", s.methods},
         {"seeds", s.seeds},
         {"eval", {{"suite", s.suite}, {"items", s.suite_items}, {"val_manifest", s.val_manifest},
                   {"val_chunks", s.val_chunks}}},
         {"train_manifest", s.train_manifest},
         {"calib_chunks", s.calib_chunks},
         {"fuse_norms", s.fuse_norms},
         {"qad", {{"steps", s.qad.steps}, {"global_batch", s.qad.global_batch}, {"lr_peak", s.qad.lr_peak},
                  {"lr_min_ratio", s.qad.lr_min_ratio}, {"lambda_kd", s.qad.lambda_kd},
                  {"clipped_ste", s.qad.clipped_ste}}},
         {"out_dir", s.out_dir}};
}

void from_json(const nlohmann::json& j, ExperimentSpec& s) {
    s = ExperimentSpec{};
    for (const auto& m : j.at("models")) {
        ModelSpec ms;
        ms.label = m.at("label").get<std::string>();
        if (m.contains("checkpoint")) ms.checkpoints.push_back(m.at("checkpoint").get<std::string>());
        if (m.contains("checkpoints")) ms.checkpoints = m.at("checkpoints").get<std::vector<std::string>>();
        ms.avg_last = m.value("avg_last", std::size_t{1});
        s.models.push_back(std::move(ms));
    }
    s.formats = j.value("formats", std::vector<std::string>{});
    s.methods = j.value("methods", std::vector<std::string>{});
    s.seeds = j.value("seeds", std::vector<std::uint64_t>{0});
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        s.suite = e.value("suite", s.suite);
        s.suite_items = e.value("items", s.suite_items);
        s.val_manifest = e.value("val_manifest", s.val_manifest);
        s.val_chunks = e.value("val_chunks", s.val_chunks);
    }
    s.train_manifest = j.value("train_manifest", s.train_manifest);
    s.calib_chunks = j.value("calib_chunks", s.calib_chunks);
    s.fuse_norms = j.value("fuse_norms", s.fuse_norms);
    if (j.contains("qad")) {
        const auto& q = j.at("qad");
        s.qad.steps = q.value("steps", s.qad.steps);
        s.qad.global_batch = q.value("global_batch", s.qad.global_batch);
        s.qad.lr_peak = q.value("lr_peak", s.qad.lr_peak);
        s.qad.lr_min_ratio = q.value("lr_min_ratio", s.qad.lr_min_ratio);
        s.qad.lambda_kd = q.value("lambda_kd", s.qad.lambda_kd);
        s.qad.clipped_ste = q.value("clipped_ste", s.qad.clipped_ste);
    }
    s.out_dir = j.value("out_dir", s.out_dir);
    for (const auto& m : s.models) {
        if (m.label.empty() || m.label.find_first_of(",/\"\n") != std::string::npos) {
            throw ConfigError("spec: model label '" + m.label + "' must be nonempty without , / \" or newline");
        }
        if (m.checkpoints.empty()) throw ConfigError("spec: model '" + m.label + "' has no checkpoint");
        if (m.avg_last == 0 || m.avg_last > m.checkpoints.size()) {
            throw ConfigError("spec: model '" + m.label + "' avg_last must be in [1, checkpoints]");
        }
    }
    for (const auto& f : s.formats) quant::parse_format(f);
    for (const auto& m : s.methods) {
        if (m != "rtn" && m != "gptq" && m != "qad") throw ConfigError("spec: unknown method '" + m + "'");
    }
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end()).get<ExperimentSpec>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

bool Report::ok() const {
    for (const auto& r : rows) {
        if (r.status != "ok") return false;
    }
    return true;
}

std::string report_csv(const Report& report) {
    std::string out = std::string(kReportHeader) + "\n";
    for (const auto& r : report.rows) {
        std::string status = r.status;
        for (char& c : status) {
            if (c == ',' || c == '\n' || c == '"') c = ' ';
        }
        out += r.label + "," + r.model + "," + r.format + "," + r.method + "," + std::to_string(r.seed) + "," +
               std::to_string(r.storage_bytes) + "," + fmt_double(r.macs) + "," + fmt_double(r.val_loss) + "," +
               fmt_double(r.gap) + "," + fmt_double(r.task_macro) + "," + fmt_double(r.recovery) + "," + status +
               "\n";
    }
    return out;
}

nlohmann::json report_json(const Report& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"label", r.label}, {"model", r.model}, {"format", r.format}, {"method", r.method},
                        {"seed", r.seed}, {"storage_bytes", r.storage_bytes}, {"macs", r.macs},
                        {"val_loss", r.val_loss}, {"gap", r.gap}, {"task_macro", r.task_macro},
                        {"recovery", r.recovery}, {"status", r.status}});
    }
    return {{"columns", kReportHeader}, {"rows", rows}};
}

Report report_from_json(const nlohmann::json& j) {
    Report report;
    for (const auto& e : j.at("rows")) {
        ReportRow r;
        r.label = e.at("label");
        r.model = e.at("model");
        r.format = e.at("format");
        r.method = e.at("method");
        r.seed = e.at("seed");
        r.storage_bytes = e.at("storage_bytes");
        r.macs = e.at("macs");
        r.val_loss = e.at("val_loss");
        r.gap = e.at("gap");
        r.task_macro = e.at("task_macro");
        r.recovery = e.at("recovery");
        r.status = e.at("status");
        report.rows.push_back(std::move(r));
    }
    return report;
}

std::vector<logitstore::TokenChunk> manifest_chunks(const logitstore::ShardManifest& manifest,
                                                    std::size_t max_chunks) {
    std::vector<logitstore::TokenChunk> out;
    logitstore::ShardStream stream(manifest);
    while (max_chunks == 0 || out.size() < max_chunks) {
        auto item = stream.next();
        if (!item) break;
        out.push_back(std::move(item->chunk));
    }
    return out;
}

nlohmann::json manifest_position(const logitstore::ShardManifest& manifest, std::uint64_t chunk_index) {
    const std::uint64_t total = manifest.total_tokens() / manifest.chunk_len;
    if (total == 0) throw Error("manifest_position: empty manifest");
    std::uint64_t left = chunk_index % total;
    for (std::size_t s = 0; s < manifest.shards.size(); ++s) {
        const std::uint64_t n = manifest.shards[s].tokens / manifest.chunk_len;
        if (left < n) return {{"shard", s}, {"chunk", left}};
        left -= n;
    }
    throw Error("manifest_position: inconsistent manifest");
}

Report run_experiment(const ExperimentSpec& spec, const std::filesystem::path& base_dir,
                      const std::function<void(const ReportRow&)>& on_row) {
    Report report;
    if (spec.models.empty() || spec.formats.empty()) return report;

    TaskSuite suite = parse_suite(spec.suite);
    suite.items = spec.suite_items;
    std::vector<logitstore::TokenChunk> val;
    if (!spec.val_manifest.empty()) {
        val = manifest_chunks(logitstore::load_manifest(resolve(base_dir, spec.val_manifest)), spec.val_chunks);
    }
    std::optional<logitstore::ShardManifest> train;
    std::vector<logitstore::TokenChunk> train_chunks;
    if (!spec.train_manifest.empty()) {
        train = logitstore::load_manifest(resolve(base_dir, spec.train_manifest));
        train_chunks = manifest_chunks(*train);
    }

    const auto emit = [&](ReportRow row) {
        if (on_row) on_row(row);
        report.rows.push_back(std::move(row));
    };
    const auto failed = [](ReportRow row, const std::exception& e) {
        row.status = std::string("error: ") + e.what();
        return row;
    };

    for (const auto& ms : spec.models) {
        Prepared base;
        std::optional<std::string> model_error;
        try {
            std::vector<model::ModelParams<float>> ckpts;
            for (std::size_t i = ms.checkpoints.size() - ms.avg_last; i < ms.checkpoints.size(); ++i) {
                ckpts.push_back(model::load_checkpoint(resolve(base_dir, ms.checkpoints[i])).params);
            }
            base.params = ckpts.size() == 1 ? std::move(ckpts[0]) : distill::weight_average(ckpts);
            if (spec.fuse_norms) base.params = quant::fuse_norms(base.params);
            if (val.empty()) throw ConfigError("spec: eval.val_manifest is required");
            base.val_loss = distill::validation_loss(base.params, val);
            const auto scores = eval_tasks(base.params, suite);
            base.task_macro = macro_accuracy(scores);
            base.macs = estimate_cost(static_cast<double>(model::count_params(base.params.config).total), 1.0,
                                      CostMode::forward);
        } catch (const std::exception& e) {
            model_error = e.what();
        }

        std::map<std::uint64_t, quant::HessianMap> hessians;
        for (const auto& fname : spec.formats) {
            const auto fmt = quant::parse_format(fname);
            const bool baseline = fmt.kind == quant::QuantKind::bf16;
            const std::vector<std::string> methods = baseline ? std::vector<std::string>{"none"} : spec.methods;
            const std::vector<std::uint64_t> seeds = baseline ? std::vector<std::uint64_t>{0} : spec.seeds;
            for (const auto& method : methods) {
                for (const std::uint64_t seed : seeds) {
                    ReportRow row;
                    row.model = ms.label;
                    row.format = fname;
                    row.method = method;
                    row.seed = seed;
                    row.label = ms.label + "/" + fname + "/" + method + "/" + std::to_string(seed);
                    if (model_error) {
                        row.status = "error: " + *model_error;
                        emit(row);
                        continue;
                    }
                    try {
                        quant::QuantizedModel q;
                        if (baseline || method == "rtn") {
                            q = quant::quantize_model_rtn(base.params, fmt);
                        } else if (method == "gptq") {
                            if (!train) throw ConfigError("spec: gptq needs train_manifest for calibration");
                            auto it = hessians.find(seed);
                            if (it == hessians.end()) {
                                const auto order = logitstore::chunk_permutation(train_chunks.size(),
                                                                                 derive_seed(seed, 0xCA11B));
                                std::vector<logitstore::TokenChunk> calib;
                                for (std::size_t i = 0; i < std::min(spec.calib_chunks, order.size()); ++i) {
                                    calib.push_back(train_chunks[order[i]]);
                                }
                                it = hessians.emplace(seed, quant::calibration_hessians(base.params, calib)).first;
                            }
                            q = quant::quantize_model_gptq(base.params, fmt, it->second);
                        } else {
                            if (!train) throw ConfigError("spec: qad needs train_manifest for teacher targets");
                            distill::ManifestSource source(*train);
                            Rng rng(derive_seed(seed, 0x0AD));
                            source.restore(manifest_position(*train, rng.below(train_chunks.size())));
                            q = quant::qad(base.params, fmt, source, spec.qad).deliverable;
                        }
                        row.storage_bytes = quant::model_storage_bytes(q);
                        row.macs = base.macs;
                        const auto hooks = quant::eval_hooks(fmt);
                        row.val_loss = distill::validation_loss(q.params, val, &hooks);
                        row.gap = row.val_loss - base.val_loss;
                        const auto scores = eval_tasks(q.params, suite, &hooks);
                        row.task_macro = macro_accuracy(scores);
                        const double b[] = {base.task_macro}, t[] = {row.task_macro};
                        row.recovery = quant::recovery(b, t);
                        if (!spec.out_dir.empty()) {
                            const auto dir = resolve(base_dir, spec.out_dir);
                            std::filesystem::create_directories(dir);
                            const auto path =
                                dir / (ms.label + "-" + fname + "-" + method + "-" + std::to_string(seed) + ".kdfc");
                            quant::save_quantized(path, q, {{"label", row.label}});
                            if (quant::quantized_payload_bytes(path) != row.storage_bytes) {
                                throw Error("storage accounting disagrees with " + path.string());
                            }
                        }
                    } catch (const std::exception& e) {
                        row = failed(row, e);
                    }
                    emit(row);
                }
            }
        }
    }
    return report;
}

}  // namespace kdlab::harness
