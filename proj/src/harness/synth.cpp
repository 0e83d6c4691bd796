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

#include "kdlab/harness/synth.hpp"

#include <cmath>
#include <cstdio>

#include "kdlab/common.hpp"
#include "kdlab/harness/tasks.hpp"
#include "kdlab/io.hpp"

namespace kdlab::harness {

namespace {

/// Index drawn with probability proportional to 1 / (i + 1).
std::size_t zipf(Rng& rng, std::size_t n) {
    double h = 0;
    for (std::size_t i = 0; i < n; ++i) h += 1.0 / static_cast<double>(i + 1);
    double u = rng.uniform() * h;
    for (std::size_t i = 0; i < n; ++i) {
        u -= 1.0 / static_cast<double>(i + 1);
        if (u < 0) return i;
    }
    return n - 1;
}

}  // namespace

std::vector<std::string> synth_texts(const SynthConfig& c) {
    if (c.documents == 0 || c.lexicon < 2 || c.successors == 0 || c.min_sentences == 0 ||
        c.max_sentences < c.min_sentences || !(c.task_rate >= 0 && c.task_rate <= 1)) {
        throw ConfigError("synth_texts: invalid configuration");
    }
    Rng rng(c.seed);
    static const char kConsonants[] = "bcdfghklmnprstvz";
    static const char kVowels[] = "aeiou";
    std::vector<std::string> words;
    while (words.size() < c.lexicon) {
        // Short words are frequent, as in natural text.
        const std::size_t syllables = 1 + zipf(rng, 3);
        std::string w;
        for (std::size_t s = 0; s < syllables; ++s) {
            w.push_back(kConsonants[rng.below(sizeof(kConsonants) - 1)]);
            w.push_back(kVowels[rng.below(sizeof(kVowels) - 1)]);
        }
        if (rng.uniform() < 0.3) w.push_back(kConsonants[rng.below(sizeof(kConsonants) - 1)]);
        words.push_back(std::move(w));
    }
    std::vector<std::vector<std::size_t>> next(c.lexicon);
    for (auto& n : next) {
        for (std::size_t s = 0; s < c.successors; ++s) n.push_back(rng.below(c.lexicon));
    }
    const TaskKind kinds[] = {TaskKind::copy, TaskKind::reverse, TaskKind::modadd};

    std::vector<std::string> texts;
    for (std::size_t d = 0; d < c.documents; ++d) {
        std::string text;
        const std::size_t sentences = c.min_sentences + rng.below(c.max_sentences - c.min_sentences + 1);
        for (std::size_t s = 0; s < sentences; ++s) {
            std::size_t w = zipf(rng, c.lexicon);
            const std::size_t len = 3 + rng.below(8);
            for (std::size_t i = 0; i < len; ++i) {
                std::string word = words[w];
                if (i == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');
                text += word;
                text += i + 1 == len ? ".\n" : " ";
                w = next[w][zipf(rng, c.successors)];
            }
            if (rng.uniform() < c.task_rate) {
                text += task_line(make_task_item(kinds[rng.below(3)], rng));
            }
        }
        texts.push_back(std::move(text));
    }
    return texts;
}

void write_texts(const std::filesystem::path& dir, const std::vector<std::string>& texts) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "doc_%07zu.txt", i);
        io::write_text(dir / name, texts[i]);
    }
}

}  // namespace kdlab::harness
