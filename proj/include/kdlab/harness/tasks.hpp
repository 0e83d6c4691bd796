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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kdlab/common.hpp"
#include "kdlab/logitstore/corpus.hpp"
#include "kdlab/model/params.hpp"
#include "kdlab/model/transformer.hpp"

namespace kdlab::harness {

using logitstore::Document;

/// Byte-level multiple-choice probes. Every item has kTaskChoices
/// continuations of equal length; a model answers with the one of highest
/// summed log-probability given the prompt.
///   copy     "copy abcd = "  -> "abcd"
///   reverse  "rev abcd = "   -> "dcba"
///   modadd   "add 7+5 = "    -> "2"      (sum mod 10)
enum class TaskKind { copy, reverse, modadd };

inline constexpr std::size_t kTaskChoices = 10;
inline constexpr std::size_t kTaskWordLen = 4;
inline constexpr char kTaskAlphabet[] = "abcdefgh";

const char* task_name(TaskKind kind);
TaskKind parse_task(const std::string& name);

struct TaskItem {
    TaskKind kind = TaskKind::copy;
    Document prompt;
    std::vector<Document> choices;  // kTaskChoices distinct, same length
    std::size_t answer = 0;
};

TaskItem make_task_item(TaskKind kind, Rng& rng);

/// The item as a training line: prompt, correct answer, newline.
std::string task_line(const TaskItem& item);

struct TaskSuite {
    std::vector<TaskKind> tasks{TaskKind::copy, TaskKind::reverse, TaskKind::modadd};
    std::size_t items = 200;  // per task
    std::uint64_t seed = 20260101;

    /// Items of task `t`, generated from a per-task stream of `seed`.
    std::vector<TaskItem> generate(std::size_t t) const;
};

/// "desk" (all tasks) or a comma-separated list of task names.
TaskSuite parse_suite(const std::string& name);

struct TaskScore {
    TaskKind kind = TaskKind::copy;
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// log p(continuation | prompt) for each choice of an item.
using ChoiceScorer = std::function<std::vector<double>(const TaskItem&)>;

/// Ties go to the lowest choice index.
std::vector<TaskScore> eval_tasks(const ChoiceScorer& scorer, const TaskSuite& suite);

/// Scores every choice with one packed forward per item. Throws ConfigError
/// when an item does not fit in the model's seq_len.
std::vector<TaskScore> eval_tasks(const model::ModelParams<float>& params, const TaskSuite& suite,
                                  const model::ForwardHooks<float>* hooks = nullptr);

double macro_accuracy(std::span<const TaskScore> scores);

}  // namespace kdlab::harness
