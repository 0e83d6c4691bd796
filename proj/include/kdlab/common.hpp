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
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace kdlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Raised when a tensor picks up a NaN/Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Deterministic random source. Only mt19937_64 is used directly because its
/// output sequence is fixed by the standard; the distributions below are
/// hand-rolled so that results do not depend on the standard library vendor.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller; caches the second variate.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Fisher-Yates, last position first.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Mix a base seed with a stream id so that independent consumers (layers,
/// shards, tasks) get decorrelated generators.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Nearest IEEE half-precision value (round-half-to-even, subnormals kept,
/// saturates to +-65504).
double round_to_fp16(double x);

/// Nearest bfloat16 value (round-half-to-even).
float round_to_bf16(float x);

std::uint16_t fp16_bits(double x);
double fp16_from_bits(std::uint16_t bits);
std::uint16_t bf16_bits(float x);
float bf16_from_bits(std::uint16_t bits);

}  // namespace kdlab
