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

#include "kdlab/logitstore/corpus.hpp"

#include <algorithm>

#include "kdlab/common.hpp"
#include "kdlab/io.hpp"

namespace kdlab::logitstore {

Document tokenize_bytes(std::string_view text) {
    Document doc;
    doc.reserve(text.size());
    for (char c : text) {
        doc.push_back(static_cast<std::uint8_t>(c));
    }
    return doc;
}

std::vector<Document> read_corpus_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("corpus directory not found: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<Document> docs;
    for (const auto& f : files) {
        docs.push_back(tokenize_bytes(io::read_text(f)));
    }
    return docs;
}

std::vector<TokenChunk> pack_corpus(std::span<const Document> documents, std::size_t chunk_len) {
    if (chunk_len == 0) {
        throw ConfigError("pack_corpus: chunk_len must be positive");
    }
    std::vector<TokenChunk> chunks;
    TokenChunk current;
    for (const Document& doc : documents) {
        if (doc.empty()) {
            continue;
        }
        bool doc_start = true;
        for (std::uint32_t tok : doc) {
            if (current.tokens.size() == chunk_len) {
                chunks.push_back(std::move(current));
                current = TokenChunk{};
            }
            if (doc_start && !current.tokens.empty()) {
                current.doc_boundaries.push_back(static_cast<std::uint32_t>(current.tokens.size()));
            }
            doc_start = false;
            current.tokens.push_back(tok);
        }
    }
    if (chunks.empty() && current.tokens.empty()) {
        throw Error("pack_corpus: empty corpus");
    }
    if (!current.tokens.empty()) {
        current.tokens.resize(chunk_len, kPadId);
        chunks.push_back(std::move(current));
    }
    return chunks;
}

std::uint32_t next_token_label(const TokenChunk& chunk, std::size_t t) {
    if (t + 1 >= chunk.tokens.size() || chunk.tokens[t] == kPadId) {
        return kPadId;
    }
    return chunk.tokens[t + 1];
}

std::size_t count_targets(std::span<const TokenChunk> chunks) {
    std::size_t n = 0;
    for (const auto& c : chunks) {
        for (std::size_t t = 0; t < c.tokens.size(); ++t) {
            n += next_token_label(c, t) != kPadId;
        }
    }
    return n;
}

}  // namespace kdlab::logitstore
