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

#include "kdlab/harness/pareto.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kdlab/common.hpp"

namespace kdlab::harness {

bool dominates(const ParetoPoint& a, const ParetoPoint& b) {
    return a.cost <= b.cost && a.quality >= b.quality && (a.cost < b.cost || a.quality > b.quality);
}

std::vector<ParetoPoint> mark_dominated(std::span<const ParetoPoint> points) {
    if (points.empty()) {
        throw Error("pareto_front: no points");
    }
    for (const auto& p : points) {
        if (!std::isfinite(p.cost) || !std::isfinite(p.quality)) {
            throw Error("pareto_front: non-finite coordinate for '" + p.label + "'");
        }
    }
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return points[a].cost < points[b].cost;
    });
    std::vector<ParetoPoint> out(points.begin(), points.end());
    // best: highest quality among strictly cheaper points.
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        double group_best = best;
        while (j < order.size() && points[order[j]].cost == points[order[i]].cost) {
            group_best = std::max(group_best, points[order[j]].quality);
            ++j;
        }
        // Same cost and lower quality, or cheaper and at least as good.
        for (std::size_t m = i; m < j; ++m) {
            const double q = points[order[m]].quality;
            out[order[m]].dominated = q < group_best || best >= q;
        }
        best = group_best;
        i = j;
    }
    return out;
}

std::vector<ParetoPoint> pareto_front(std::span<const ParetoPoint> points) {
    auto marked = mark_dominated(points);
    std::erase_if(marked, [](const ParetoPoint& p) { return p.dominated; });
    std::sort(marked.begin(), marked.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
        if (a.cost != b.cost) return a.cost < b.cost;
        if (a.quality != b.quality) return a.quality > b.quality;
        return a.label < b.label;
    });
    return marked;
}

}  // namespace kdlab::harness
