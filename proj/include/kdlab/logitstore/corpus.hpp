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
#include <string_view>
#include <vector>

namespace kdlab::logitstore {

/// Byte-level tokenizer: ids 0..255 are bytes, 256 is the pad id.
inline constexpr std::uint32_t kPadId = 256;
inline constexpr std::size_t kByteVocab = 257;

using Document = std::vector<std::uint32_t>;

Document tokenize_bytes(std::string_view text);

/// Reads every regular file in `dir` (sorted by name) as one document.
std::vector<Document> read_corpus_dir(const std::filesystem::path& dir);

/// A fixed-length slice of the packed token stream. `doc_boundaries` are the
/// in-chunk offsets where a new document starts (offset 0 is implicit).
struct TokenChunk {
    std::vector<std::uint32_t> tokens;
    std::vector<std::uint32_t> doc_boundaries;

    friend bool operator==(const TokenChunk&, const TokenChunk&) = default;
};

/// Concatenates documents and cuts every `chunk_len` tokens; the last chunk
/// is filled with kPadId. Throws if there are no tokens at all.
std::vector<TokenChunk> pack_corpus(std::span<const Document> documents, std::size_t chunk_len);

/// Next-token label for position t of a chunk; kPadId when t has no
/// trainable target (last position, or pad target). Targets that cross a
/// document boundary are kept.
std::uint32_t next_token_label(const TokenChunk& chunk, std::size_t t);

/// Number of positions with a trainable next-token target.
std::size_t count_targets(std::span<const TokenChunk> chunks);

}  // namespace kdlab::logitstore
