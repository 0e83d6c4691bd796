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
#include <string>
#include <vector>

namespace kdlab::harness {

/// Synthetic training text: sentences from a random word-bigram chain over
/// a Zipf-weighted lexicon, with task lines (see tasks.hpp) mixed in.
/// Word successors are sparse and skewed, so the next-byte distribution has
/// real entropy at word starts and is nearly deterministic inside words,
/// which gives a teacher's soft targets something to add over labels.
struct SynthConfig {
    std::size_t documents = 1000;
    std::size_t min_sentences = 2;
    std::size_t max_sentences = 8;
    std::size_t lexicon = 256;
    std::size_t successors = 6;  // per word
    double task_rate = 0.3;      // probability of a task line after a sentence
    std::uint64_t seed = 1;
};

std::vector<std::string> synth_texts(const SynthConfig& config);

/// Writes doc_<i>.txt files (zero-padded, so read_corpus_dir keeps order).
void write_texts(const std::filesystem::path& dir, const std::vector<std::string>& texts);

}  // namespace kdlab::harness
