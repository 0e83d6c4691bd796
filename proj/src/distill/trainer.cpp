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

#include "kdlab/distill/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "kdlab/common.hpp"
#include "kdlab/io.hpp"
#include "kdlab/model/checkpoint.hpp"
#include "kdlab/numerics/ops.hpp"

namespace kdlab::distill {

using logitstore::StreamItem;
using model::ModelParams;

std::string format_metrics_row(const MetricsRow& r) {
    char buf[256];
    char val[32] = "";
    if (!std::isnan(r.val_loss)) {
        std::snprintf(val, sizeof val, "%.9g", r.val_loss);
    }
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%s,%llu", r.iter, r.lr, r.train_loss,
                  r.kl_term, r.ce_term, val, static_cast<unsigned long long>(r.tokens_seen));
    return buf;
}

KdTerms compute_gradients(const ModelParams<float>& params, const Batch& batch, double lambda,
                          const model::ForwardHooks<float>* hooks,
                          std::vector<Tensor<float>>& grads) {
    Tape<float> tape;
    const model::ModelVars vars = model::bind_params(tape, params, true);
    const Var logits = model::forward(tape, vars, params.config, batch.input, hooks);
    KdTerms terms;
    const Var loss = sparse_kd_loss(tape, logits, batch.targets, lambda, &terms);
    if (!std::isfinite(terms.loss)) {
        throw NumericError("non-finite loss");
    }
    tape.backward(loss);
    grads.clear();
    for (Var leaf : vars.leaves()) {
        grads.push_back(tape.grad(leaf));
    }
    return terms;
}

std::vector<bool> decay_mask(const ModelParams<float>& params) {
    std::vector<bool> mask;
    params.visit([&](const std::string&, const Tensor<float>& t) { mask.push_back(t.rank() == 2); });
    return mask;
}

double validation_loss(const ModelParams<float>& params,
                       std::span<const logitstore::TokenChunk> val_chunks,
                       const model::ForwardHooks<float>* hooks) {
    if (val_chunks.empty()) {
        throw Error("validation_loss: empty validation set");
    }
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& chunk : val_chunks) {
        Tape<float> tape;
        const model::ModelVars vars = model::bind_params(tape, params, false);
        const auto input = model::pack_input(chunk.tokens, chunk.doc_boundaries);
        const Var logits = model::forward(tape, vars, params.config, input, hooks);
        const Tensor<float>& z = tape.value(logits);
        for (std::size_t t = 0; t < chunk.tokens.size(); ++t) {
            const std::uint32_t y = logitstore::next_token_label(chunk, t);
            if (y == logitstore::kPadId) {
                continue;
            }
            const auto row = z.row(t);
            double mx = row[0];
            for (float v : row) mx = std::max<double>(mx, v);
            double s = 0.0;
            for (float v : row) s += std::exp(static_cast<double>(v) - mx);
            total += mx + std::log(s) - static_cast<double>(row[y]);
            ++count;
        }
    }
    if (count == 0) {
        throw Error("validation_loss: no scored positions");
    }
    return total / static_cast<double>(count);
}

ModelParams<float> weight_average(std::span<const ModelParams<float>> checkpoints) {
    if (checkpoints.empty()) {
        throw Error("weight_average: no checkpoints");
    }
    ModelParams<float> out = checkpoints.front();
    std::vector<Tensor<float>*> dst = out.tensors();
    std::vector<std::vector<double>> acc;
    for (auto* t : dst) acc.emplace_back(t->size(), 0.0);
    for (const auto& c : checkpoints) {
        if (!(c.config == out.config)) {
            throw Error("weight_average: checkpoint configs differ");
        }
        const auto src = c.tensors();
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (src[i]->shape() != dst[i]->shape()) {
                throw Error("weight_average: shape mismatch");
            }
            for (std::size_t j = 0; j < src[i]->size(); ++j) acc[i][j] += (*src[i])[j];
        }
    }
    const double n = static_cast<double>(checkpoints.size());
    for (std::size_t i = 0; i < dst.size(); ++i) {
        for (std::size_t j = 0; j < dst[i]->size(); ++j) {
            (*dst[i])[j] = static_cast<float>(acc[i][j] / n);
        }
    }
    return out;
}

namespace {

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t iter) {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt-%07zu.kdfc", iter);
    return dir / name;
}

void check_compatible(const model::ModelConfig& student, const BatchSource& src) {
    if (src.vocab() != student.vocab) {
        throw ConfigError("data vocab " + std::to_string(src.vocab()) + " != student vocab " +
                          std::to_string(student.vocab));
    }
    if (src.chunk_len() > student.seq_len) {
        throw ConfigError("data chunk_len " + std::to_string(src.chunk_len()) +
                          " exceeds student seq_len " + std::to_string(student.seq_len));
    }
}

// Keeps metrics rows up to `iter`, so a resumed run does not duplicate rows
// logged after the checkpoint it restarts from.
void truncate_metrics(const std::filesystem::path& path, std::size_t iter) {
    std::vector<std::string> keep;
    if (std::filesystem::exists(path)) {
        std::istringstream in(io::read_text(path));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (!line.empty() && std::stoull(line.substr(0, line.find(','))) <= iter) {
                keep.push_back(line);
            }
        }
    }
    std::string text = std::string(kMetricsHeader) + "\n";
    for (const auto& l : keep) text += l + "\n";
    io::write_text(path, text);
}

}  // namespace

ManifestSource::ManifestSource(const logitstore::ShardManifest& manifest)
    : stream_(manifest), vocab_(manifest.vocab), chunk_len_(manifest.chunk_len) {}

Batch ManifestSource::next_batch(std::size_t n) {
    std::vector<StreamItem> items;
    while (items.size() < n) {
        auto item = stream_.next();
        if (!item) {
            stream_.rewind();
            item = stream_.next();
            if (!item) {
                throw Error("train: manifest has no chunks");
            }
        }
        items.push_back(std::move(*item));
    }
    return make_batch(items);
}

nlohmann::json ManifestSource::position() const {
    const auto p = stream_.position();
    return {{"shard", p.shard}, {"chunk", p.chunk}};
}

void ManifestSource::restore(const nlohmann::json& position) {
    stream_.seek({position.at("shard").get<std::size_t>(), position.at("chunk").get<std::size_t>()});
}

ChunkSource::ChunkSource(std::vector<logitstore::TokenChunk> chunks, std::uint32_t vocab,
                         const model::ModelParams<float>* teacher, std::size_t k)
    : chunks_(std::move(chunks)), vocab_(vocab), teacher_(teacher), k_(k) {
    if (chunks_.empty()) {
        throw Error("ChunkSource: no chunks");
    }
    if (teacher_ && (k_ == 0 || teacher_->config.vocab != vocab_)) {
        throw ConfigError("ChunkSource: teacher needs k > 0 and a matching vocab");
    }
}

std::uint32_t ChunkSource::chunk_len() const {
    return static_cast<std::uint32_t>(chunks_.front().tokens.size());
}

Batch ChunkSource::next_batch(std::size_t n) {
    std::vector<logitstore::TokenChunk> picked;
    for (std::size_t i = 0; i < n; ++i) {
        picked.push_back(chunks_[next_]);
        next_ = (next_ + 1) % chunks_.size();
    }
    if (teacher_) {
        return make_live_batch(picked, *teacher_, k_);
    }
    std::vector<StreamItem> items(picked.size());
    for (std::size_t i = 0; i < picked.size(); ++i) {
        items[i].chunk = std::move(picked[i]);
    }
    return make_batch(items);
}

void ChunkSource::restore(const nlohmann::json& position) {
    const auto p = position.get<std::size_t>();
    if (p >= chunks_.size()) {
        throw Error("ChunkSource: position out of range");
    }
    next_ = p;
}

TrainResult train(const model::ModelConfig& student, const logitstore::ShardManifest& manifest,
                  const TrainConfig& config, std::span<const logitstore::TokenChunk> val_chunks,
                  const TrainOptions& options) {
    ManifestSource source(manifest);
    return train(student, source, config, val_chunks, options);
}

TrainResult train(const model::ModelConfig& student, BatchSource& source,
                  const TrainConfig& config, std::span<const logitstore::TokenChunk> val_chunks,
                  const TrainOptions& options, const model::ForwardHooks<float>* hooks) {
    config.validate();
    student.validate();
    check_compatible(student, source);
    std::filesystem::create_directories(options.out_dir);
    const auto metrics_path = options.out_dir / "metrics.csv";

    TrainResult result;
    std::size_t iter = 0;
    std::uint64_t tokens_seen = 0;
    std::unique_ptr<Optimizer> opt;

    if (options.resume_from) {
        auto ck = model::load_checkpoint(*options.resume_from);
        if (!(ck.params.config == student)) {
            throw ConfigError("resume checkpoint has a different model config");
        }
        const auto& meta = ck.meta;
        if (meta.value("optimizer", std::string()) != config.optimizer) {
            throw ConfigError("resume checkpoint was written by another optimizer");
        }
        iter = meta.at("iter").get<std::size_t>();
        tokens_seen = meta.at("tokens_seen").get<std::uint64_t>();
        result.params = std::move(ck.params);
        std::vector<numerics::Shape> shapes;
        result.params.visit([&](const std::string&, const Tensor<float>& t) { shapes.push_back(t.shape()); });
        opt = make_optimizer(config, shapes);
        opt->load_state(std::move(ck.extra), meta.at("opt_steps").get<std::uint64_t>());
        source.restore(meta.at("data_position"));
        truncate_metrics(metrics_path, iter);
    } else {
        result.params = options.init ? *options.init : model::build_model<float>(student, config.seed);
        if (!(result.params.config == student)) {
            throw ConfigError("initial params do not match the student config");
        }
        std::vector<numerics::Shape> shapes;
        result.params.visit([&](const std::string&, const Tensor<float>& t) { shapes.push_back(t.shape()); });
        opt = make_optimizer(config, shapes);
        truncate_metrics(metrics_path, 0);
    }

    const std::vector<bool> mask = decay_mask(result.params);
    std::vector<Tensor<float>> grads;
    std::ofstream metrics(metrics_path, std::ios::app);

    auto save = [&](std::size_t at) {
        nlohmann::json meta{{"kind", "train"},
                            {"iter", at},
                            {"tokens_seen", tokens_seen},
                            {"data_position", source.position()},
                            {"optimizer", opt->name()},
                            {"opt_steps", opt->steps_taken()},
                            {"train_config", config}};
        const auto state = opt->state();
        const auto path = checkpoint_path(options.out_dir, at);
        model::save_checkpoint(path, result.params, meta, state);
        result.checkpoints.push_back({at, path});
    };

    const std::size_t end = std::min(config.total_iters, options.stop_at.value_or(config.total_iters));
    double acc_loss = 0.0, acc_kl = 0.0, acc_ce = 0.0;
    std::size_t acc_n = 0;
    while (iter < end) {
        const Batch batch = source.next_batch(config.global_batch);
        const KdTerms terms = compute_gradients(result.params, batch, config.lambda_kd, hooks, grads);
        std::vector<Tensor<float>*> gptr;
        for (auto& g : grads) gptr.push_back(&g);
        for (std::size_t i = 0; i < grads.size(); ++i) {
            if (!grads[i].all_finite()) {
                throw NumericError("non-finite gradient at iteration " + std::to_string(iter));
            }
        }
        clip_grad_norm(gptr, config.grad_clip);

        std::vector<ParamSlot> slots;
        std::size_t idx = 0;
        result.params.visit([&](const std::string& name, Tensor<float>& t) {
            slots.push_back({name, &t, &grads[idx], mask[idx]});
            ++idx;
        });
        const double lr = wsd_lr(iter + 1, config);
        opt->step(slots, lr, iter);
        ++iter;
        tokens_seen += batch.tokens;
        acc_loss += terms.loss;
        acc_kl += terms.kl;
        acc_ce += terms.ce;
        ++acc_n;

        const bool final_iter = iter == config.total_iters;
        const bool do_eval = !val_chunks.empty() &&
                             (final_iter || (config.eval_interval && iter % config.eval_interval == 0));
        const bool do_log = final_iter || do_eval || (config.log_interval && iter % config.log_interval == 0);
        if (do_log) {
            MetricsRow row{iter, lr, acc_loss / acc_n, acc_kl / acc_n, acc_ce / acc_n, std::nan(""),
                           tokens_seen};
            if (do_eval) {
                row.val_loss = validation_loss(result.params, val_chunks, hooks);
            }
            metrics << format_metrics_row(row) << '\n';
            metrics.flush();
            result.metrics.push_back(row);
            if (options.on_log) options.on_log(row);
            acc_loss = acc_kl = acc_ce = 0.0;
            acc_n = 0;
        }
        if (final_iter || (config.checkpoint_interval && iter % config.checkpoint_interval == 0)) {
            save(iter);
        }
    }
    return result;
}

}  // namespace kdlab::distill
