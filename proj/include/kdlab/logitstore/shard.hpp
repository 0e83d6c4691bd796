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
#include <future>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdlab/logitstore/corpus.hpp"
#include "kdlab/logitstore/sparse.hpp"
#include "kdlab/model/params.hpp"

namespace kdlab::logitstore {

inline constexpr std::uint32_t kShardVersion = 1;

/// Decoded content of one shard: whole chunks, each with chunk_len records.
/// Records are stored flat: position p of chunk c owns entries
/// [(c*chunk_len + p)*k, +k) of `indices` and `probs`.
struct ShardData {
    std::uint32_t vocab = 0;
    std::uint32_t k = 0;
    std::uint32_t chunk_len = 0;
    std::vector<TokenChunk> chunks;
    std::vector<std::uint32_t> indices;
    std::vector<float> probs;

    std::uint64_t record_count() const { return indices.size() / (k ? k : 1); }
    SparseLogitRecord record(std::size_t chunk, std::size_t pos) const;

    friend bool operator==(const ShardData&, const ShardData&) = default;
};

/// Uncompressed frame: "SLOG", u32 version, u32 vocab, u32 K, u64 record
/// count, records (K u32 indices then K f32 probs each), then the chunk
/// section (u32 chunk_len, u32 chunks, per chunk: tokens, u32 boundary count,
/// boundaries). The record section is exactly record_count * K * 8 bytes.
std::vector<std::uint8_t> encode_shard_frame(const ShardData& shard);
ShardData decode_shard_frame(std::span<const std::uint8_t> frame, const std::string& context);

std::vector<std::uint8_t> encode_shard(const ShardData& shard);  // gzip(frame)
ShardData decode_shard(std::span<const std::uint8_t> file_bytes, const std::string& context);

struct ShardEntry {
    std::string path;  // relative to the manifest directory
    std::uint64_t tokens = 0;
    std::uint32_t crc32 = 0;  // of the compressed file bytes

    friend bool operator==(const ShardEntry&, const ShardEntry&) = default;
};

struct ShardManifest {
    std::uint32_t vocab = 0;
    std::uint32_t k = 0;
    std::uint32_t chunk_len = 0;
    std::uint64_t perm_seed = 0;
    std::string codec = "gzip";
    std::vector<ShardEntry> shards;
    std::filesystem::path dir;  // not serialized; set on load

    std::uint64_t total_tokens() const;
    void validate() const;

    friend bool operator==(const ShardManifest& a, const ShardManifest& b) {
        return a.vocab == b.vocab && a.k == b.k && a.chunk_len == b.chunk_len &&
               a.perm_seed == b.perm_seed && a.codec == b.codec && a.shards == b.shards;
    }
};

void to_json(nlohmann::json& j, const ShardManifest& m);
void from_json(const nlohmann::json& j, ShardManifest& m);

ShardManifest load_manifest(const std::filesystem::path& manifest_path);
void save_manifest(const std::filesystem::path& manifest_path, const ShardManifest& manifest);

/// Chunk order written to disk. Seed 0 is the identity; any other seed gives
/// a Fisher-Yates shuffle driven by Rng(seed).
std::vector<std::size_t> chunk_permutation(std::size_t n, std::uint64_t perm_seed);

/// Teacher distribution rows for one chunk, softmax computed in double.
std::vector<SparseLogitRecord> teacher_records(const model::ModelParams<float>& teacher,
                                               const TokenChunk& chunk, std::size_t k);

/// Same for several chunks in one packed forward pass; rows are
/// concatenated in chunk order and equal the per-chunk results exactly.
std::vector<SparseLogitRecord> teacher_records(const model::ModelParams<float>& teacher,
                                               std::span<const TokenChunk> chunks, std::size_t k);

struct GenerateOptions {
    std::size_t k = 32;
    std::uint64_t perm_seed = 0;
    std::size_t tokens_per_shard = 65536;  // rounded down to whole chunks, at least one
};

/// Runs the teacher over every chunk, permutes chunk order, writes shards and
/// `manifest.json` into `out_dir`, and returns the manifest.
ShardManifest generate_logit_shards(const model::ModelParams<float>& teacher,
                                    std::span<const TokenChunk> chunks,
                                    const GenerateOptions& options,
                                    const std::filesystem::path& out_dir);

/// One chunk and its teacher records as yielded by ShardStream.
struct StreamItem {
    TokenChunk chunk;
    std::uint32_t k = 0;
    std::vector<std::uint32_t> indices;  // chunk_len * k
    std::vector<float> probs;            // chunk_len * k
    std::size_t shard = 0;
    std::size_t chunk_in_shard = 0;

    SparseLogitRecord record(std::size_t pos) const;
};

struct StreamPosition {
    std::size_t shard = 0;
    std::size_t chunk = 0;

    friend bool operator==(const StreamPosition&, const StreamPosition&) = default;
};

/// Called for every file read: (shard index, byte offset, length).
using ReadObserver = std::function<void(std::size_t, std::uint64_t, std::size_t)>;

/// Sequential reader over a manifest. While the caller consumes shard i, the
/// next shard is read and decoded in the background; nothing further is
/// buffered. Shards are verified against the manifest CRC and the gzip
/// trailer; failures throw IoError naming the shard file.
class ShardStream {
public:
    explicit ShardStream(ShardManifest manifest, ReadObserver observer = {});
    ~ShardStream();
    ShardStream(const ShardStream&) = delete;
    ShardStream& operator=(const ShardStream&) = delete;

    /// Next chunk, or nullopt at the end of the epoch.
    std::optional<StreamItem> next();

    /// Position of the item the next call to next() returns.
    StreamPosition position() const { return pos_; }
    void seek(StreamPosition pos);
    void rewind() { seek({}); }

    const ShardManifest& manifest() const { return manifest_; }
    /// Decoded shards currently held ahead of the consumer (0 or 1).
    std::size_t buffered_ahead() const { return pending_.valid() ? 1 : 0; }

private:
    ShardData load(std::size_t shard) const;
    void start_prefetch(std::size_t shard);

    ShardManifest manifest_;
    ReadObserver observer_;
    StreamPosition pos_;
    std::optional<ShardData> current_;
    std::size_t current_index_ = 0;
    std::future<ShardData> pending_;
    std::size_t pending_index_ = 0;
};

}  // namespace kdlab::logitstore
