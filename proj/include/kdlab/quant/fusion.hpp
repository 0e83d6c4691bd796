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

#include <vector>

#include "kdlab/model/params.hpp"

namespace kdlab::quant {

/// Column scales that equalize the input-column L2 norms of `w` at their
/// mean: s_j = mean(c) / c_j, and 1 for zero columns.
template <typename T>
std::vector<double> equalizing_scales(const numerics::Tensor<T>& w);

/// Rescales the input columns of each block's stacked QKV and up projection
/// to a common norm and divides the preceding RMSNorm gains by the same
/// factors. The network function is unchanged up to rounding.
template <typename T>
model::ModelParams<T> fuse_norms(const model::ModelParams<T>& params);

}  // namespace kdlab::quant
