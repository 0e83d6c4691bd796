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

#include <doctest.h>
#include <omp.h>

#include <cmath>
#include <vector>

#include "kdlab/numerics/gradcheck.hpp"
#include "kdlab/numerics/kernels.hpp"
#include "kdlab/numerics/ops.hpp"
#include "test_util.hpp"

using namespace kdlab;
using namespace kdlab::numerics;
using kdlab::testing::random_tensor;

namespace {

constexpr double kPrimitiveTol = 1e-6;
constexpr double kFdEps = 1e-5;
constexpr int kTrials = 20;

// Weighted sum of a tensor-valued op, so every output coordinate carries an
// O(1) gradient and the scalar check covers the full Jacobian-vector product.
Var weighted_sum(Tape<double>& tape, Var y, std::uint64_t seed) {
    Rng rng(seed);
    const auto& shape = tape.value(y).shape();
    const Var w = tape.constant(random_tensor<double>(shape, rng));
    return sum(tape, mul(tape, y, w));
}

double check_primitive(const std::vector<Shape>& shapes, std::uint64_t seed,
                       const std::function<Var(Tape<double>&, std::span<const Var>)>& op) {
    Rng rng(seed);
    std::vector<Tensor<double>> params;
    for (const auto& s : shapes) {
        params.push_back(random_tensor<double>(s, rng));
    }
    ScalarFn<double> fn = [&](Tape<double>& tape, std::span<const Var> v) {
        return weighted_sum(tape, op(tape, v), seed ^ 0xabcdefULL);
    };
    return gradcheck<double>(fn, params, kFdEps).max_rel_error;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }
double silu_d(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

}  // namespace

TEST_CASE("backward of x*x at 3 is 6") {
    Tape<double> tape;
    const Var x = tape.leaf(Tensor<double>::scalar(3.0));
    tape.backward(mul(tape, x, x));
    CHECK(tape.grad(x)[0] == 6.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
    Tape<double> tape;
    const Var x = tape.leaf(Tensor<double>({3}, 1.0));
    CHECK_THROWS_AS(tape.backward(scale(tape, x, 2.0)), Error);
}

TEST_CASE("untouched leaves receive zero gradient") {
    Tape<double> tape;
    const Var x = tape.leaf(Tensor<double>::scalar(2.0));
    const Var unused = tape.leaf(Tensor<double>({4}, 1.0));
    tape.backward(mul(tape, x, x));
    CHECK(tape.grad(unused) == Tensor<double>({4}, 0.0));
}

TEST_CASE("non-finite values raise an error naming the primitive") {
    Tape<float> tape;
    const Var x = tape.leaf(Tensor<float>::scalar(3e38f));
    try {
        (void)scale(tape, x, 10.0f);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("scale") != std::string::npos);
    }
}

TEST_CASE("gradcheck of identity is exact") {
    // Dyadic points and a power-of-two step keep x +/- eps exact, so the only
    // error left would be in the tape.
    std::vector<Tensor<double>> p{Tensor<double>({5}, std::vector<double>{0.75, -1.25, 3.0, 0.0, -0.5})};
    ScalarFn<double> fn = [](Tape<double>& t, std::span<const Var> v) { return sum(t, v[0]); };
    CHECK(gradcheck<double>(fn, p, 0x1.0p-10).max_rel_error < 1e-12);
}

TEST_CASE("gradcheck reports but does not hide a piecewise-constant mismatch") {
    std::vector<Tensor<double>> p{Tensor<double>({3}, std::vector<double>{0.49, 1.51, -0.5001})};
    UnaryFn<double> round_fn{"round", [](double x) { return std::nearbyint(x); },
                             [](double) { return 0.0; }};
    ScalarFn<double> fn = [&](Tape<double>& t, std::span<const Var> v) {
        return sum(t, unary(t, v[0], round_fn));
    };
    const auto report = gradcheck<double>(fn, p, 0.02);
    MESSAGE("rounding gradcheck max rel error: " << report.max_rel_error);
    CHECK(std::isfinite(report.max_rel_error));
}

TEST_CASE("projected gradcheck agrees with the coordinate sweep") {
    Rng rng(77);
    std::vector<Tensor<double>> p{random_tensor<double>({4, 5}, rng), random_tensor<double>({3, 4}, rng)};
    ScalarFn<double> fn = [&](Tape<double>& t, std::span<const Var> v) {
        return weighted_sum(t, softmax_rows(t, matmul(t, v[1], v[0])), 3);
    };
    const auto r = gradcheck_directions<double>(fn, p, 1e-5, 12, 1);
    CHECK(r.max_rel_error < kPrimitiveTol);
    CHECK(r.max_rel_error < 10 * std::max(1e-9, gradcheck<double>(fn, p, kFdEps).max_rel_error));

    // A wrong backward shows up along every direction that touches it.
    UnaryFn<double> bad{"bad_square", [](double x) { return x * x; }, [](double x) { return 3 * x; }};
    ScalarFn<double> wrong = [&](Tape<double>& t, std::span<const Var> v) {
        return sum(t, unary(t, v[0], bad));
    };
    std::vector<Tensor<double>> one{random_tensor<double>({6}, rng)};
    CHECK(gradcheck_directions<double>(wrong, one, 1e-5, 4, 2).max_rel_error > 0.3);
    CHECK_THROWS_AS(gradcheck_directions<double>(fn, p, 0.0, 3, 1), Error);
}

TEST_CASE("every primitive matches central differences in 64-bit") {
    for (int trial = 0; trial < kTrials; ++trial) {
        const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(trial);
        CAPTURE(trial);
        CHECK(check_primitive({{3, 4}, {3, 4}}, seed, [](auto& t, auto v) { return add(t, v[0], v[1]); }) <
              kPrimitiveTol);
        CHECK(check_primitive({{3, 4}, {3, 4}}, seed, [](auto& t, auto v) { return mul(t, v[0], v[1]); }) <
              kPrimitiveTol);
        CHECK(check_primitive({{3, 4}}, seed, [](auto& t, auto v) { return scale(t, v[0], -1.7); }) <
              kPrimitiveTol);
        CHECK(check_primitive({{3, 4}}, seed, [](auto& t, auto v) { return mean(t, v[0]); }) <
              kPrimitiveTol);
        CHECK(check_primitive({{3, 5}, {5, 2}}, seed, [](auto& t, auto v) { return matmul(t, v[0], v[1]); }) <
              kPrimitiveTol);
        CHECK(check_primitive({{3, 5}, {4, 5}}, seed, [](auto& t, auto v) { return linear(t, v[0], v[1]); }) <
              kPrimitiveTol);
        CHECK(check_primitive({{3, 6}, {6}}, seed,
                              [](auto& t, auto v) { return rms_norm(t, v[0], v[1], 1e-5); }) < kPrimitiveTol);
        const std::vector<std::uint32_t> pos{0, 1, 2, 0, 1};
        CHECK(check_primitive({{5, 8}}, seed,
                              [&](auto& t, auto v) { return rope(t, v[0], pos, 2, 4, 10000.0); }) <
              kPrimitiveTol);
        const std::vector<std::uint32_t> seg{0, 0, 0, 3, 3};
        CHECK(check_primitive({{5, 8}, {5, 4}, {5, 4}}, seed,
                              [&](auto& t, auto v) { return attention(t, v[0], v[1], v[2], seg, 2, 1, 4); }) <
              kPrimitiveTol);
        UnaryFn<double> fn{"silu", silu, silu_d};
        CHECK(check_primitive({{3, 4}}, seed, [&](auto& t, auto v) { return unary(t, v[0], fn); }) <
              kPrimitiveTol);
        CHECK(check_primitive({{3, 5}}, seed, [](auto& t, auto v) { return softmax_rows(t, v[0]); }) <
              kPrimitiveTol);
        const std::vector<std::uint32_t> idx{4, 0, 2};
        CHECK(check_primitive({{3, 5}}, seed,
                              [&](auto& t, auto v) { return log_softmax_gather(t, v[0], idx); }) <
              kPrimitiveTol);
        const std::vector<std::uint32_t> ids{1, 3, 1, 0};
        CHECK(check_primitive({{4, 3}}, seed, [&](auto& t, auto v) { return embedding(t, v[0], ids); }) <
              kPrimitiveTol);
        CHECK(check_primitive({{3, 6}}, seed, [](auto& t, auto v) { return slice_cols(t, v[0], 1, 4); }) <
              kPrimitiveTol);
    }
}

TEST_CASE("RMSNorm summed, 64-bit, eps 1e-5 finite differences") {
    Rng rng(7);
    std::vector<Tensor<double>> p{random_tensor<double>({4, 8}, rng), random_tensor<double>({8}, rng)};
    ScalarFn<double> fn = [](Tape<double>& t, std::span<const Var> v) {
        return sum(t, rms_norm(t, v[0], v[1], 1e-5));
    };
    CHECK(gradcheck<double>(fn, p, 1e-5).max_rel_error < kPrimitiveTol);
}

TEST_CASE("two-layer matmul and activation chain gradchecks") {
    Rng rng(11);
    std::vector<Tensor<double>> p{random_tensor<double>({4, 6}, rng), random_tensor<double>({5, 6}, rng),
                                  random_tensor<double>({3, 5}, rng)};
    UnaryFn<double> act{"silu", silu, silu_d};
    ScalarFn<double> fn = [&](Tape<double>& t, std::span<const Var> v) {
        const Var h = unary(t, linear(t, v[0], v[1]), act);
        return weighted_sum(t, linear(t, h, v[2]), 5);
    };
    CHECK(gradcheck<double>(fn, p, 1e-5).max_rel_error < kPrimitiveTol);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(3);
    {
        Tape<float> tape;
        const Var s = softmax_rows(tape, tape.leaf(random_tensor<float>({6, 50}, rng, 3.0)));
        for (std::size_t r = 0; r < 6; ++r) {
            double total = 0;
            for (float v : tape.value(s).row(r)) total += v;
            CHECK(std::fabs(total - 1.0) < 1e-6);
        }
    }
    {
        Tape<double> tape;
        const Var s = softmax_rows(tape, tape.leaf(random_tensor<double>({6, 50}, rng, 3.0)));
        for (std::size_t r = 0; r < 6; ++r) {
            double total = 0;
            for (double v : tape.value(s).row(r)) total += v;
            CHECK(std::fabs(total - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("replay reproduces recorded outputs bit-identically") {
    Rng rng(5);
    Tape<float> tape;
    const Var x = tape.leaf(random_tensor<float>({4, 8}, rng));
    const Var w = tape.leaf(random_tensor<float>({6, 8}, rng));
    const Var y = softmax_rows(tape, linear(tape, x, w));
    const Tensor<float> first = tape.value(y);
    tape.replay();
    CHECK(bit_equal(first, tape.value(y)));
}

TEST_CASE("OpenMP kernels agree with the serial reference") {
    Rng rng(17);
    for (auto [m, n, k] : {std::tuple{1, 1, 1}, {3, 7, 5}, {17, 33, 19}, {8, 64, 128}, {31, 5, 67}}) {
        CAPTURE(m);
        CAPTURE(n);
        CAPTURE(k);
        const auto x = random_tensor<double>({std::size_t(m), std::size_t(k)}, rng);
        const auto w = random_tensor<double>({std::size_t(n), std::size_t(k)}, rng);
        const auto b = random_tensor<double>({std::size_t(k), std::size_t(n)}, rng);
        const auto a = random_tensor<double>({std::size_t(k), std::size_t(m)}, rng);
        Tensor<double> y1({std::size_t(m), std::size_t(n)}), y2 = y1;
        kernels::gemm_nt<double>(x.span(), w.span(), y1.span(), m, n, k, false);
        reference::gemm_nt<double>(x.span(), w.span(), y2.span(), m, n, k, false);
        CHECK(testing::max_abs_diff(y1, y2) < 1e-12);
        kernels::gemm_nn<double>(x.span(), b.span(), y1.span(), m, n, k, false);
        reference::gemm_nn<double>(x.span(), b.span(), y2.span(), m, n, k, false);
        CHECK(testing::max_abs_diff(y1, y2) < 1e-12);
        kernels::gemm_tn<double>(a.span(), b.span(), y1.span(), m, n, k, true);
        reference::gemm_tn<double>(a.span(), b.span(), y2.span(), m, n, k, true);
        CHECK(testing::max_abs_diff(y1, y2) < 1e-12);
    }
}

TEST_CASE("windowed attention kernel matches dense masked reference") {
    Rng rng(23);
    const AttentionShape shape{9, 4, 2, 8, 5};
    const std::vector<std::uint32_t> seg{0, 0, 0, 0, 4, 4, 4, 4, 4};
    const auto q = random_tensor<double>({9, 32}, rng);
    const auto k = random_tensor<double>({9, 16}, rng);
    const auto v = random_tensor<double>({9, 16}, rng);
    Tensor<double> out1({9, 32}), out2({9, 32}), probs({4 * 9 * 5});
    kernels::attention_forward<double>(q.span(), k.span(), v.span(), seg, shape, 0.35, out1.span(),
                                       probs.span());
    reference::attention_forward<double>(q.span(), k.span(), v.span(), seg, shape, 0.35, out2.span());
    CHECK(testing::max_abs_diff(out1, out2) < 1e-12);
}

TEST_CASE("kernel results do not depend on the thread count") {
    Rng rng(29);
    const auto x = random_tensor<float>({37, 70}, rng);
    const auto w = random_tensor<float>({45, 70}, rng);
    Tensor<float> y1({37, 45}), y2({37, 45});
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    kernels::gemm_nt<float>(x.span(), w.span(), y1.span(), 37, 45, 70, false);
    omp_set_num_threads(3);
    kernels::gemm_nt<float>(x.span(), w.span(), y2.span(), 37, 45, 70, false);
    omp_set_num_threads(saved);
    CHECK(bit_equal(y1, y2));
}
