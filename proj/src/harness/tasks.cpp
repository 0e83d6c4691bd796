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

#include "kdlab/harness/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>

#include "kdlab/numerics/kernels.hpp"

namespace kdlab::harness {

namespace {

std::string random_word(Rng& rng) {
    std::string w(kTaskWordLen, 'a');
    for (char& c : w) c = kTaskAlphabet[rng.below(sizeof(kTaskAlphabet) - 1)];
    return w;
}

Document to_doc(const std::string& s) { return logitstore::tokenize_bytes(s); }

}  // namespace

const char* task_name(TaskKind kind) {
    switch (kind) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::modadd: return "modadd";
    }
    return "?";
}

TaskKind parse_task(const std::string& name) {
    for (auto k : {TaskKind::copy, TaskKind::reverse, TaskKind::modadd}) {
        if (name == task_name(k)) return k;
    }
    throw ConfigError("unknown task '" + name + "'");
}

TaskItem make_task_item(TaskKind kind, Rng& rng) {
    TaskItem item;
    item.kind = kind;
    std::vector<std::string> choices;
    std::string prompt, answer;
    if (kind == TaskKind::modadd) {
        const auto a = rng.below(10), b = rng.below(10);
        prompt = "add " + std::to_string(a) + "+" + std::to_string(b) + " = ";
        answer = std::to_string((a + b) % 10);
        for (int d = 0; d < 10; ++d) choices.push_back(std::to_string(d));
    } else {
        const std::string w = random_word(rng);
        std::string r(w.rbegin(), w.rend());
        prompt = (kind == TaskKind::copy ? "copy " : "rev ") + w + " = ";
        answer = kind == TaskKind::copy ? w : r;
        choices.push_back(answer);
        // The other direction is the most tempting wrong answer.
        const std::string& mirror = kind == TaskKind::copy ? r : w;
        if (mirror != answer) choices.push_back(mirror);
        while (choices.size() < kTaskChoices) {
            const std::string d = random_word(rng);
            if (std::find(choices.begin(), choices.end(), d) == choices.end()) choices.push_back(d);
        }
        rng.shuffle(choices);
    }
    item.prompt = to_doc(prompt);
    for (std::size_t i = 0; i < choices.size(); ++i) {
        if (choices[i] == answer) item.answer = i;
        item.choices.push_back(to_doc(choices[i]));
    }
    return item;
}

std::string task_line(const TaskItem& item) {
    std::string s;
    for (auto t : item.prompt) s.push_back(static_cast<char>(t));
    for (auto t : item.choices[item.answer]) s.push_back(static_cast<char>(t));
    s.push_back('\n');
    return s;
}

std::vector<TaskItem> TaskSuite::generate(std::size_t t) const {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(tasks.at(t))));
    std::vector<TaskItem> out;
    for (std::size_t i = 0; i < items; ++i) out.push_back(make_task_item(tasks[t], rng));
    return out;
}

TaskSuite parse_suite(const std::string& name) {
    TaskSuite suite;
    if (name == "desk") return suite;
    suite.tasks.clear();
    std::stringstream ss(name);
    for (std::string part; std::getline(ss, part, ',');) suite.tasks.push_back(parse_task(part));
    if (suite.tasks.empty()) throw ConfigError("empty task suite");
    return suite;
}

std::vector<TaskScore> eval_tasks(const ChoiceScorer& scorer, const TaskSuite& suite) {
    if (suite.tasks.empty() || suite.items == 0) {
        throw ConfigError("eval_tasks: empty suite");
    }
    std::vector<TaskScore> scores;
    for (std::size_t t = 0; t < suite.tasks.size(); ++t) {
        const auto items = suite.generate(t);
        std::vector<char> hit(items.size(), 0);
        std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
        for (std::size_t i = 0; i < items.size(); ++i) {
            try {
                const auto lp = scorer(items[i]);
                hit[i] = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin()) ==
                         items[i].answer;
            } catch (...) {
#pragma omp critical
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);
        scores.push_back({suite.tasks[t], static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1)),
                          items.size()});
    }
    return scores;
}

std::vector<TaskScore> eval_tasks(const model::ModelParams<float>& params, const TaskSuite& suite,
                                  const model::ForwardHooks<float>* hooks) {
    const auto& cfg = params.config;
    const ChoiceScorer scorer = [&](const TaskItem& item) {
        model::PackedInput input;
        for (const auto& c : item.choices) {
            Document seq = item.prompt;
            seq.insert(seq.end(), c.begin(), c.end() - 1);
            if (seq.size() > cfg.seq_len) {
                throw ConfigError("eval_tasks: " + std::string(task_name(item.kind)) + " item needs " +
                                  std::to_string(seq.size()) + " positions, model seq_len is " +
                                  std::to_string(cfg.seq_len));
            }
            input.append(seq, {});
        }
        numerics::Tape<float> tape;
        const auto vars = model::bind_params(tape, params, false);
        const auto& logits = tape.value(model::forward(tape, vars, cfg, input, hooks));
        std::vector<double> scores;
        std::vector<double> row(cfg.vocab);
        std::size_t base = 0;
        for (const auto& c : item.choices) {
            double s = 0;
            for (std::size_t j = 0; j < c.size(); ++j) {
                // Row predicting c[j] is the one holding the previous token.
                const auto lr = logits.row(base + item.prompt.size() - 1 + j);
                double mx = -INFINITY;
                for (float v : lr) mx = std::max<double>(mx, v);
                double z = 0;
                for (float v : lr) z += std::exp(static_cast<double>(v) - mx);
                s += static_cast<double>(lr[c[j]]) - mx - std::log(z);
            }
            scores.push_back(s);
            base += item.prompt.size() + c.size() - 1;
        }
        return scores;
    };
    return eval_tasks(scorer, suite);
}

double macro_accuracy(std::span<const TaskScore> scores) {
    if (scores.empty()) throw Error("macro_accuracy: no scores");
    double s = 0;
    for (const auto& t : scores) s += t.accuracy();
    return s / static_cast<double>(scores.size());
}

}  // namespace kdlab::harness
