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

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "kdlab/distill/loss.hpp"
#include "kdlab/distill/optimizer.hpp"
#include "kdlab/distill/schedule.hpp"
#include "kdlab/logitstore/shard.hpp"
#include "kdlab/model/params.hpp"
#include "kdlab/model/transformer.hpp"

namespace kdlab::distill {

struct MetricsRow {
    std::size_t iter = 0;  // iterations completed
    double lr = 0.0;
    double train_loss = 0.0;
    double kl_term = 0.0;
    double ce_term = 0.0;
    double val_loss = std::nan("");  // NaN when not evaluated at this row
    std::uint64_t tokens_seen = 0;
};

inline constexpr const char* kMetricsHeader = "iter,lr,train_loss,kl_term,ce_term,val_loss,tokens_seen";

std::string format_metrics_row(const MetricsRow& row);

struct CheckpointRef {
    std::size_t iter = 0;
    std::filesystem::path path;
};

struct TrainOptions {
    std::filesystem::path out_dir;  // checkpoints and metrics.csv
    /// Continue from a checkpoint written by an earlier call.
    std::optional<std::filesystem::path> resume_from;
    /// Start from these weights instead of build_model(config, seed).
    std::optional<model::ModelParams<float>> init;
    /// Stop after this many completed iterations (simulated interruption).
    std::optional<std::size_t> stop_at;
    std::function<void(const MetricsRow&)> on_log;
};

struct TrainResult {
    model::ModelParams<float> params;
    std::vector<CheckpointRef> checkpoints;
    std::vector<MetricsRow> metrics;
};

/// Gradients of the KD loss for one batch, in ModelParams::visit order.
KdTerms compute_gradients(const model::ModelParams<float>& params, const Batch& batch,
                          double lambda, const model::ForwardHooks<float>* hooks,
                          std::vector<Tensor<float>>& grads);

/// Which tensors receive decoupled weight decay (matrices, not norm gains).
std::vector<bool> decay_mask(const model::ModelParams<float>& params);

/// Where training batches come from. Positions are opaque JSON so a
/// checkpoint can restore any source.
class BatchSource {
public:
    virtual ~BatchSource() = default;
    virtual std::uint32_t vocab() const = 0;
    virtual std::uint32_t chunk_len() const = 0;
    /// Next `n` chunks, wrapping to the start at the end of an epoch.
    virtual Batch next_batch(std::size_t n) = 0;
    virtual nlohmann::json position() const = 0;
    virtual void restore(const nlohmann::json& position) = 0;
};

/// Sequential reads of a shard manifest (stored teacher records).
class ManifestSource final : public BatchSource {
public:
    explicit ManifestSource(const logitstore::ShardManifest& manifest);
    std::uint32_t vocab() const override { return vocab_; }
    std::uint32_t chunk_len() const override { return chunk_len_; }
    Batch next_batch(std::size_t n) override;
    nlohmann::json position() const override;
    void restore(const nlohmann::json& position) override;

private:
    logitstore::ShardStream stream_;
    std::uint32_t vocab_, chunk_len_;
};

/// In-memory chunks in order. With a teacher, targets are its top-k rows
/// computed on the fly; without one, batches carry labels only (k = 0) and
/// are usable with lambda_kd = 0.
class ChunkSource final : public BatchSource {
public:
    ChunkSource(std::vector<logitstore::TokenChunk> chunks, std::uint32_t vocab,
                const model::ModelParams<float>* teacher = nullptr, std::size_t k = 0);
    std::uint32_t vocab() const override { return vocab_; }
    std::uint32_t chunk_len() const override;
    Batch next_batch(std::size_t n) override;
    nlohmann::json position() const override { return next_; }
    void restore(const nlohmann::json& position) override;

private:
    std::vector<logitstore::TokenChunk> chunks_;
    std::uint32_t vocab_;
    const model::ModelParams<float>* teacher_;
    std::size_t k_;
    std::size_t next_ = 0;
};

/// Streams `manifest` in order, global_batch chunks per iteration, wrapping
/// into a new epoch at the end. Checkpoints carry params, optimizer state and
/// the stream position, so resuming reproduces an uninterrupted run bit for
/// bit. Throws ConfigError on manifest/model mismatch and NumericError on a
/// non-finite loss or gradient.
TrainResult train(const model::ModelConfig& student, const logitstore::ShardManifest& manifest,
                  const TrainConfig& config, std::span<const logitstore::TokenChunk> val_chunks,
                  const TrainOptions& options);

/// Same loop over an arbitrary source. `hooks` apply to every training
/// forward (quantization-aware training installs its fake-quant here);
/// validation runs through the same hooks.
TrainResult train(const model::ModelConfig& student, BatchSource& source,
                  const TrainConfig& config, std::span<const logitstore::TokenChunk> val_chunks,
                  const TrainOptions& options, const model::ForwardHooks<float>* hooks = nullptr);

/// Mean next-token cross-entropy (nats) over positions with a target.
double validation_loss(const model::ModelParams<float>& params,
                       std::span<const logitstore::TokenChunk> val_chunks,
                       const model::ForwardHooks<float>* hooks = nullptr);

/// Elementwise arithmetic mean (accumulated in double).
model::ModelParams<float> weight_average(std::span<const model::ModelParams<float>> checkpoints);

}  // namespace kdlab::distill
