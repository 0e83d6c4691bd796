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

// Serial reference kernels vs the OpenMP kernels on desk-model shapes.
// Prints time per call, throughput, speedup and the largest difference
// between the two (the kernels must agree to rounding).
//
//   bench_kernels [--repeats N] [--threads T]

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "kdlab/common.hpp"
#include "kdlab/numerics/kernels.hpp"

using namespace kdlab;
using namespace kdlab::numerics;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.normal());
    return v;
}

double seconds_per_call(const std::function<void()>& fn, int repeats) {
    fn();  // warm-up
    double best = INFINITY;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

double max_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
    return m;
}

void row(const char* name, double flops, double t_ref, double t_omp, double diff) {
    std::printf("%-28s %10.3f %10.3f %9.2f %9.2f %8.2fx %10.2e\n", name, t_ref * 1e3, t_omp * 1e3,
                flops / t_ref * 1e-9, flops / t_omp * 1e-9, t_ref / t_omp, diff);
}

}  // namespace

int main(int argc, char** argv) {
    int repeats = 5;
    for (int i = 1; i + 1 < argc; i += 2) {
        if (!std::strcmp(argv[i], "--repeats")) repeats = std::atoi(argv[i + 1]);
        if (!std::strcmp(argv[i], "--threads")) omp_set_num_threads(std::atoi(argv[i + 1]));
    }
    std::printf("threads %d, best of %d\n", omp_get_max_threads(), repeats);
    std::printf("%-28s %10s %10s %9s %9s %9s %10s\n", "kernel", "ref ms", "omp ms", "ref GF/s", "omp GF/s",
                "speedup", "max diff");
    Rng rng(1);

    struct Gemm {
        const char* name;
        std::size_t m, n, k;
    };
    // Batch 16 x 64 tokens through a dim-96 block, and the tied LM head.
    for (const Gemm g : {Gemm{"gemm_nt qkv 1024x192x96", 1024, 192, 96}, Gemm{"gemm_nt up 1024x384x96", 1024, 384, 96},
                         Gemm{"gemm_nt head 1024x257x96", 1024, 257, 96}}) {
        const auto x = random_vec(g.m * g.k, rng), w = random_vec(g.n * g.k, rng);
        std::vector<float> y1(g.m * g.n), y2(g.m * g.n);
        const double t1 = seconds_per_call([&] { reference::gemm_nt<float>(x, w, y1, g.m, g.n, g.k, false); }, repeats);
        const double t2 = seconds_per_call([&] { kernels::gemm_nt<float>(x, w, y2, g.m, g.n, g.k, false); }, repeats);
        row(g.name, 2.0 * g.m * g.n * g.k, t1, t2, max_diff(y1, y2));
    }
    {
        // Weight gradient of the up projection: dW = dY^T X.
        const std::size_t m = 384, n = 96, k = 1024;
        const auto a = random_vec(k * m, rng), b = random_vec(k * n, rng);
        std::vector<float> y1(m * n), y2(m * n);
        const double t1 = seconds_per_call([&] { reference::gemm_tn<float>(a, b, y1, m, n, k, false); }, repeats);
        const double t2 = seconds_per_call([&] { kernels::gemm_tn<float>(a, b, y2, m, n, k, false); }, repeats);
        row("gemm_tn dW 384x96x1024", 2.0 * m * n * k, t1, t2, max_diff(y1, y2));
    }
    {
        const std::size_t m = 1024, n = 96, k = 384;
        const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
        std::vector<float> y1(m * n), y2(m * n);
        const double t1 = seconds_per_call([&] { reference::gemm_nn<float>(a, b, y1, m, n, k, false); }, repeats);
        const double t2 = seconds_per_call([&] { kernels::gemm_nn<float>(a, b, y2, m, n, k, false); }, repeats);
        row("gemm_nn dX 1024x96x384", 2.0 * m * n * k, t1, t2, max_diff(y1, y2));
    }
    {
        // 16 sequences of 64 tokens, documents of 16 tokens.
        AttentionShape s{1024, 4, 2, 24, 64};
        const auto q = random_vec(s.rows * s.q_heads * s.head_dim, rng);
        const auto k = random_vec(s.rows * s.kv_heads * s.head_dim, rng);
        const auto v = random_vec(s.rows * s.kv_heads * s.head_dim, rng);
        std::vector<std::uint32_t> seg(s.rows);
        for (std::size_t i = 0; i < s.rows; ++i) seg[i] = static_cast<std::uint32_t>(i / 16 * 16);
        std::vector<float> o1(q.size()), o2(q.size()), probs(s.q_heads * s.rows * s.window);
        const float scale = 1.0f / std::sqrt(24.0f);
        const double t1 = seconds_per_call(
            [&] { reference::attention_forward<float>(q, k, v, seg, s, scale, o1); }, repeats);
        const double t2 = seconds_per_call(
            [&] { kernels::attention_forward<float>(q, k, v, seg, s, scale, o2, probs); }, repeats);
        // The reference is dense over all rows; count the useful work only.
        double pairs = 0;
        for (std::size_t i = 0; i < s.rows; ++i) pairs += static_cast<double>(i - seg[i] + 1);
        row("attention fwd 1024 rows", 4.0 * pairs * s.q_heads * s.head_dim, t1, t2, max_diff(o1, o2));
    }
    return 0;
}
