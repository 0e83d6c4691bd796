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

#include "kdlab/logitstore/shard.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>

#include "kdlab/common.hpp"
#include "kdlab/io.hpp"
#include "kdlab/model/transformer.hpp"

namespace kdlab::logitstore {

namespace {

constexpr std::size_t kReadBlock = std::size_t{1} << 20;
// Chunks per teacher forward; rows are independent, so this only affects speed.
constexpr std::size_t kTeacherBatch = 16;

std::string shard_file_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "shard-%05zu.slog.gz", i);
    return buf;
}

}  // namespace

SparseLogitRecord ShardData::record(std::size_t chunk, std::size_t pos) const {
    const std::size_t base = (chunk * chunk_len + pos) * k;
    SparseLogitRecord r;
    r.indices.assign(indices.begin() + static_cast<std::ptrdiff_t>(base),
                     indices.begin() + static_cast<std::ptrdiff_t>(base + k));
    r.probs.assign(probs.begin() + static_cast<std::ptrdiff_t>(base),
                   probs.begin() + static_cast<std::ptrdiff_t>(base + k));
    return r;
}

std::vector<std::uint8_t> encode_shard_frame(const ShardData& shard) {
    const std::uint64_t records = shard.record_count();
    if (shard.indices.size() != shard.probs.size() ||
        records != std::uint64_t{shard.chunks.size()} * shard.chunk_len) {
        throw Error("encode_shard_frame: record count does not match chunks");
    }
    io::ByteWriter w;
    w.put_magic("SLOG");
    w.put<std::uint32_t>(kShardVersion);
    w.put<std::uint32_t>(shard.vocab);
    w.put<std::uint32_t>(shard.k);
    w.put<std::uint64_t>(records);
    for (std::uint64_t r = 0; r < records; ++r) {
        w.put_array(std::span<const std::uint32_t>(shard.indices).subspan(r * shard.k, shard.k));
        w.put_array(std::span<const float>(shard.probs).subspan(r * shard.k, shard.k));
    }
    w.put<std::uint32_t>(shard.chunk_len);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(shard.chunks.size()));
    for (const auto& c : shard.chunks) {
        if (c.tokens.size() != shard.chunk_len) {
            throw Error("encode_shard_frame: chunk length mismatch");
        }
        w.put_array(std::span<const std::uint32_t>(c.tokens));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(c.doc_boundaries.size()));
        w.put_array(std::span<const std::uint32_t>(c.doc_boundaries));
    }
    return std::move(w.bytes());
}

ShardData decode_shard_frame(std::span<const std::uint8_t> frame, const std::string& context) {
    io::ByteReader r(frame, context);
    r.expect_magic("SLOG");
    const auto version = r.get<std::uint32_t>();
    if (version != kShardVersion) {
        throw IoError(context + ": unsupported shard version " + std::to_string(version));
    }
    ShardData s;
    s.vocab = r.get<std::uint32_t>();
    s.k = r.get<std::uint32_t>();
    const auto records = r.get<std::uint64_t>();
    if (records * s.k * 8 > r.remaining()) {
        throw IoError(context + ": truncated record section");
    }
    s.indices.resize(records * s.k);
    s.probs.resize(records * s.k);
    for (std::uint64_t i = 0; i < records; ++i) {
        r.get_bytes(s.indices.data() + i * s.k, s.k * sizeof(std::uint32_t));
        r.get_bytes(s.probs.data() + i * s.k, s.k * sizeof(float));
    }
    s.chunk_len = r.get<std::uint32_t>();
    const auto n_chunks = r.get<std::uint32_t>();
    if (std::uint64_t{n_chunks} * s.chunk_len != records) {
        throw IoError(context + ": chunk section disagrees with record count");
    }
    s.chunks.resize(n_chunks);
    for (auto& c : s.chunks) {
        c.tokens = r.get_array<std::uint32_t>(s.chunk_len);
        const auto nb = r.get<std::uint32_t>();
        c.doc_boundaries = r.get_array<std::uint32_t>(nb);
    }
    if (r.remaining() != 0) {
        throw IoError(context + ": " + std::to_string(r.remaining()) + " trailing bytes in frame");
    }
    return s;
}

std::vector<std::uint8_t> encode_shard(const ShardData& shard) {
    return io::gzip_compress(encode_shard_frame(shard));
}

ShardData decode_shard(std::span<const std::uint8_t> file_bytes, const std::string& context) {
    return decode_shard_frame(io::gzip_decompress(file_bytes, context), context);
}

std::uint64_t ShardManifest::total_tokens() const {
    std::uint64_t n = 0;
    for (const auto& s : shards) {
        n += s.tokens;
    }
    return n;
}

void ShardManifest::validate() const {
    if (codec != "gzip") {
        throw ConfigError("manifest: unsupported codec '" + codec + "'");
    }
    if (vocab == 0 || k == 0 || k > vocab || chunk_len == 0) {
        throw ConfigError("manifest: invalid vocab/k/chunk_len");
    }
    std::vector<std::string> paths;
    for (const auto& s : shards) {
        if (s.tokens == 0 || s.tokens % chunk_len != 0) {
            throw ConfigError("manifest: shard " + s.path + " has invalid token count");
        }
        paths.push_back(s.path);
    }
    std::sort(paths.begin(), paths.end());
    if (std::adjacent_find(paths.begin(), paths.end()) != paths.end()) {
        throw ConfigError("manifest: shard listed twice");
    }
}

void to_json(nlohmann::json& j, const ShardManifest& m) {
    nlohmann::json shards = nlohmann::json::array();
    for (const auto& s : m.shards) {
        shards.push_back({{"path", s.path}, {"tokens", s.tokens}, {"crc32", s.crc32}});
    }
    j = {{"vocab", m.vocab},         {"k", m.k},         {"chunk_len", m.chunk_len},
         {"perm_seed", m.perm_seed}, {"codec", m.codec}, {"shards", shards}};
}

void from_json(const nlohmann::json& j, ShardManifest& m) {
    m.vocab = j.at("vocab").get<std::uint32_t>();
    m.k = j.at("k").get<std::uint32_t>();
    m.chunk_len = j.at("chunk_len").get<std::uint32_t>();
    m.perm_seed = j.at("perm_seed").get<std::uint64_t>();
    m.codec = j.at("codec").get<std::string>();
    m.shards.clear();
    for (const auto& s : j.at("shards")) {
        m.shards.push_back({s.at("path").get<std::string>(), s.at("tokens").get<std::uint64_t>(),
                            s.at("crc32").get<std::uint32_t>()});
    }
}

ShardManifest load_manifest(const std::filesystem::path& manifest_path) {
    ShardManifest m;
    try {
        m = nlohmann::json::parse(io::read_text(manifest_path)).get<ShardManifest>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(manifest_path.string() + ": " + e.what());
    }
    m.dir = manifest_path.parent_path();
    m.validate();
    return m;
}

void save_manifest(const std::filesystem::path& manifest_path, const ShardManifest& manifest) {
    io::write_text(manifest_path, nlohmann::json(manifest).dump(2) + "\n");
}

std::vector<std::size_t> chunk_permutation(std::size_t n, std::uint64_t perm_seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (perm_seed == 0) {
        return order;
    }
    Rng rng(perm_seed);
    rng.shuffle(order);
    return order;
}

std::vector<SparseLogitRecord> teacher_records(const model::ModelParams<float>& teacher,
                                               std::span<const TokenChunk> chunks, std::size_t k) {
    model::PackedInput input;
    for (const auto& c : chunks) {
        input.append(c.tokens, c.doc_boundaries);
    }
    numerics::Tape<float> tape;
    const auto vars = model::bind_params(tape, teacher, false);
    const auto& logits = tape.value(model::forward(tape, vars, teacher.config, input));
    const std::size_t vocab = logits.cols();
    std::vector<SparseLogitRecord> out;
    out.reserve(logits.rows());
    std::vector<double> p(vocab);
    for (std::size_t t = 0; t < logits.rows(); ++t) {
        const auto row = logits.row(t);
        double mx = row[0];
        for (float v : row) {
            mx = std::max<double>(mx, v);
        }
        double z = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) {
            p[v] = std::exp(static_cast<double>(row[v]) - mx);
            z += p[v];
        }
        for (double& x : p) {
            x /= z;
        }
        out.push_back(topk_sparsify(p, k));
    }
    return out;
}

std::vector<SparseLogitRecord> teacher_records(const model::ModelParams<float>& teacher,
                                               const TokenChunk& chunk, std::size_t k) {
    return teacher_records(teacher, std::span<const TokenChunk>(&chunk, 1), k);
}

ShardManifest generate_logit_shards(const model::ModelParams<float>& teacher,
                                    std::span<const TokenChunk> chunks,
                                    const GenerateOptions& options,
                                    const std::filesystem::path& out_dir) {
    if (chunks.empty()) {
        throw Error("generate_logit_shards: no chunks");
    }
    const std::size_t chunk_len = chunks.front().tokens.size();
    const std::size_t vocab = teacher.config.vocab;
    for (const auto& c : chunks) {
        if (c.tokens.size() != chunk_len) {
            throw Error("generate_logit_shards: chunks have different lengths");
        }
        for (std::uint32_t t : c.tokens) {
            if (t >= vocab) {
                throw Error("generate_logit_shards: token " + std::to_string(t) +
                            " outside teacher vocab " + std::to_string(vocab));
            }
        }
    }
    if (options.k == 0 || options.k > vocab) {
        throw Error("generate_logit_shards: K must be in [1, vocab]");
    }
    const auto order = chunk_permutation(chunks.size(), options.perm_seed);
    const std::size_t per_shard = std::max<std::size_t>(1, options.tokens_per_shard / chunk_len);
    const std::size_t n_shards = (chunks.size() + per_shard - 1) / per_shard;

    ShardManifest m;
    m.vocab = static_cast<std::uint32_t>(vocab);
    m.k = static_cast<std::uint32_t>(options.k);
    m.chunk_len = static_cast<std::uint32_t>(chunk_len);
    m.perm_seed = options.perm_seed;
    m.shards.resize(n_shards);
    m.dir = out_dir;
    std::filesystem::create_directories(out_dir);

    std::vector<std::exception_ptr> errors(n_shards);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t s = 0; s < n_shards; ++s) {
        try {
            ShardData shard;
            shard.vocab = m.vocab;
            shard.k = m.k;
            shard.chunk_len = m.chunk_len;
            const std::size_t end = std::min(chunks.size(), (s + 1) * per_shard);
            for (std::size_t i = s * per_shard; i < end; ++i) {
                shard.chunks.push_back(chunks[order[i]]);
            }
            for (std::size_t b = 0; b < shard.chunks.size(); b += kTeacherBatch) {
                const std::size_t n = std::min(kTeacherBatch, shard.chunks.size() - b);
                const auto records = teacher_records(
                    teacher, std::span<const TokenChunk>(shard.chunks).subspan(b, n), options.k);
                for (const auto& r : records) {
                    shard.indices.insert(shard.indices.end(), r.indices.begin(), r.indices.end());
                    shard.probs.insert(shard.probs.end(), r.probs.begin(), r.probs.end());
                }
            }
            const auto bytes = encode_shard(shard);
            const std::string name = shard_file_name(s);
            io::write_file(out_dir / name, bytes);
            m.shards[s] = {name, shard.chunks.size() * chunk_len, io::crc32(bytes)};
        } catch (...) {
            errors[s] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    save_manifest(out_dir / "manifest.json", m);
    return m;
}

SparseLogitRecord StreamItem::record(std::size_t pos) const {
    SparseLogitRecord r;
    r.indices.assign(indices.begin() + static_cast<std::ptrdiff_t>(pos * k),
                     indices.begin() + static_cast<std::ptrdiff_t>((pos + 1) * k));
    r.probs.assign(probs.begin() + static_cast<std::ptrdiff_t>(pos * k),
                   probs.begin() + static_cast<std::ptrdiff_t>((pos + 1) * k));
    return r;
}

ShardStream::ShardStream(ShardManifest manifest, ReadObserver observer)
    : manifest_(std::move(manifest)), observer_(std::move(observer)) {
    manifest_.validate();
    for (const auto& s : manifest_.shards) {
        if (!std::filesystem::exists(manifest_.dir / s.path)) {
            throw IoError("missing shard file " + (manifest_.dir / s.path).string());
        }
    }
    seek({});
}

ShardStream::~ShardStream() {
    if (pending_.valid()) {
        pending_.wait();
    }
}

ShardData ShardStream::load(std::size_t index) const {
    const ShardEntry& entry = manifest_.shards[index];
    const auto path = manifest_.dir / entry.path;
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open shard " + path.string());
    }
    std::vector<std::uint8_t> bytes;
    std::uint64_t offset = 0;
    std::vector<char> block(kReadBlock);
    while (in) {
        in.read(block.data(), static_cast<std::streamsize>(block.size()));
        const auto got = static_cast<std::size_t>(in.gcount());
        if (got == 0) {
            break;
        }
        if (observer_) {
            observer_(index, offset, got);
        }
        bytes.insert(bytes.end(), block.begin(), block.begin() + static_cast<std::ptrdiff_t>(got));
        offset += got;
    }
    if (io::crc32(bytes) != entry.crc32) {
        throw IoError("checksum mismatch in shard " + path.string());
    }
    ShardData data = decode_shard(bytes, "shard " + path.string());
    if (data.vocab != manifest_.vocab || data.k != manifest_.k ||
        data.chunk_len != manifest_.chunk_len ||
        data.chunks.size() * std::uint64_t{data.chunk_len} != entry.tokens) {
        throw IoError("shard " + path.string() + " disagrees with manifest");
    }
    return data;
}

void ShardStream::start_prefetch(std::size_t shard) {
    if (shard >= manifest_.shards.size()) {
        return;
    }
    pending_index_ = shard;
    pending_ = std::async(std::launch::async, [this, shard] { return load(shard); });
}

void ShardStream::seek(StreamPosition pos) {
    if (pending_.valid()) {
        pending_.wait();
        pending_ = {};
    }
    current_.reset();
    pos_ = pos;
    start_prefetch(pos.shard);
}

std::optional<StreamItem> ShardStream::next() {
    while (true) {
        if (pos_.shard >= manifest_.shards.size()) {
            return std::nullopt;
        }
        if (!current_ || current_index_ != pos_.shard) {
            if (!pending_.valid() || pending_index_ != pos_.shard) {
                start_prefetch(pos_.shard);
            }
            current_ = pending_.get();
            current_index_ = pos_.shard;
            start_prefetch(pos_.shard + 1);
        }
        if (pos_.chunk < current_->chunks.size()) {
            break;
        }
        ++pos_.shard;
        pos_.chunk = 0;
    }
    const ShardData& s = *current_;
    StreamItem item;
    item.chunk = s.chunks[pos_.chunk];
    item.k = s.k;
    const std::size_t span = std::size_t{s.chunk_len} * s.k;
    const auto begin = static_cast<std::ptrdiff_t>(pos_.chunk * span);
    item.indices.assign(s.indices.begin() + begin, s.indices.begin() + begin + static_cast<std::ptrdiff_t>(span));
    item.probs.assign(s.probs.begin() + begin, s.probs.begin() + begin + static_cast<std::ptrdiff_t>(span));
    item.shard = pos_.shard;
    item.chunk_in_shard = pos_.chunk;
    ++pos_.chunk;
    return item;
}

}  // namespace kdlab::logitstore
