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

#include <span>
#include <string>
#include <vector>

namespace kdlab::harness {

/// Lower cost and higher quality are better.
struct ParetoPoint {
    std::string label;
    double cost = 0;
    double quality = 0;
    bool dominated = false;
};

/// a dominates b: no worse on both axes and strictly better on one.
bool dominates(const ParetoPoint& a, const ParetoPoint& b);

/// Copy of `points` with `dominated` set. O(n log n).
std::vector<ParetoPoint> mark_dominated(std::span<const ParetoPoint> points);

/// Non-dominated points sorted by cost, then quality descending, then label.
/// Points tied on both axes are all kept. Throws Error on empty input or a
/// non-finite coordinate.
std::vector<ParetoPoint> pareto_front(std::span<const ParetoPoint> points);

}  // namespace kdlab::harness
