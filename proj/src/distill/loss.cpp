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

#include "kdlab/distill/loss.hpp"

#include <cmath>
#include <memory>

#include "kdlab/common.hpp"

namespace kdlab::distill {

using numerics::Tensor;

template <typename T>
Var sparse_kd_loss(Tape<T>& tape, Var logits, const KdTargets& targets, double lambda,
                   KdTerms* terms) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("sparse_kd_loss: lambda must lie in [0, 1]");
    }
    const Tensor<T>& z = tape.value(logits);
    const std::size_t rows = z.rows();
    const std::size_t vocab = z.cols();
    const std::size_t k = targets.k;
    if (targets.labels.size() != rows || targets.indices.size() != rows * k ||
        targets.probs.size() != rows * k) {
        throw Error("sparse_kd_loss: targets do not match logits rows");
    }
    std::size_t scored = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::uint32_t y = targets.labels[r];
        if (y == kIgnoreLabel) {
            continue;
        }
        if (y >= vocab) {
            throw Error("sparse_kd_loss: label " + std::to_string(y) + " out of range");
        }
        double mass = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (targets.indices[r * k + j] >= vocab) {
                throw Error("sparse_kd_loss: record index out of range");
            }
            mass += targets.probs[r * k + j];
        }
        if (lambda > 0.0 && !(mass > 0.0)) {
            throw Error("sparse_kd_loss: zero renormalization mass at row " + std::to_string(r));
        }
        ++scored;
    }
    if (scored == 0) {
        throw Error("sparse_kd_loss: no scored positions");
    }

    auto split = std::make_shared<KdTerms>();
    const auto tg = std::make_shared<const KdTargets>(targets);
    const Var out = tape.record(
        "sparse_kd_loss", {logits},
        [tg, lambda, split, vocab, k](std::span<const Tensor<T>* const> in, Tensor<T>& o,
                                      std::vector<Tensor<T>>& saved) {
            const Tensor<T>& x = *in[0];
            const std::size_t n_rows = x.rows();
            // saved[0] holds the row softmax for the backward pass.
            saved.assign(1, Tensor<T>(x.shape()));
            Tensor<T>& q = saved[0];
            double kl_sum = 0.0, ce_sum = 0.0;
            std::size_t n = 0;
            for (std::size_t r = 0; r < n_rows; ++r) {
                const auto row = x.row(r);
                double mx = row[0];
                for (T v : row) mx = std::max<double>(mx, v);
                double zsum = 0.0;
                for (T v : row) zsum += std::exp(static_cast<double>(v) - mx);
                const double lse = mx + std::log(zsum);
                auto qrow = q.row(r);
                for (std::size_t v = 0; v < vocab; ++v) {
                    qrow[v] = static_cast<T>(std::exp(static_cast<double>(row[v]) - lse));
                }
                const std::uint32_t y = tg->labels[r];
                if (y == kIgnoreLabel) {
                    continue;
                }
                ++n;
                ce_sum += lse - static_cast<double>(row[y]);
                double mass = 0.0;
                for (std::size_t j = 0; j < k; ++j) mass += tg->probs[r * k + j];
                if (mass > 0.0) {
                    for (std::size_t j = 0; j < k; ++j) {
                        const double p = tg->probs[r * k + j] / mass;
                        if (p > 0.0) {
                            const double logq = static_cast<double>(row[tg->indices[r * k + j]]) - lse;
                            kl_sum += p * (std::log(p) - logq);
                        }
                    }
                }
            }
            split->kl = kl_sum / static_cast<double>(n);
            split->ce = ce_sum / static_cast<double>(n);
            split->loss = lambda * split->kl + (1.0 - lambda) * split->ce;
            split->positions = n;
            o = Tensor<T>::scalar(static_cast<T>(split->loss));
        },
        [tg, lambda, split, vocab, k](std::span<const Tensor<T>* const>, const Tensor<T>&,
                                      const std::vector<Tensor<T>>& saved, const Tensor<T>& g,
                                      std::span<Tensor<T>* const> grad_in) {
            if (!grad_in[0]) {
                return;
            }
            const Tensor<T>& q = saved[0];
            Tensor<T>& dz = *grad_in[0];
            const double scale = static_cast<double>(g[0]) / static_cast<double>(split->positions);
            for (std::size_t r = 0; r < q.rows(); ++r) {
                const std::uint32_t y = tg->labels[r];
                if (y == kIgnoreLabel) {
                    continue;
                }
                const auto qrow = q.row(r);
                auto drow = dz.row(r);
                for (std::size_t v = 0; v < vocab; ++v) {
                    drow[v] += static_cast<T>(scale * static_cast<double>(qrow[v]));
                }
                double mass = 0.0;
                for (std::size_t j = 0; j < k; ++j) mass += tg->probs[r * k + j];
                if (mass > 0.0 && lambda > 0.0) {
                    for (std::size_t j = 0; j < k; ++j) {
                        drow[tg->indices[r * k + j]] -=
                            static_cast<T>(scale * lambda * tg->probs[r * k + j] / mass);
                    }
                }
                drow[y] -= static_cast<T>(scale * (1.0 - lambda));
            }
        });
    if (terms) {
        *terms = *split;
    }
    return out;
}

template Var sparse_kd_loss<float>(Tape<float>&, Var, const KdTargets&, double, KdTerms*);
template Var sparse_kd_loss<double>(Tape<double>&, Var, const KdTargets&, double, KdTerms*);

namespace {

void append_labels(const logitstore::TokenChunk& chunk, KdTargets& t) {
    for (std::size_t p = 0; p < chunk.tokens.size(); ++p) {
        const std::uint32_t y = logitstore::next_token_label(chunk, p);
        t.labels.push_back(y == logitstore::kPadId ? kIgnoreLabel : y);
    }
}

}  // namespace

Batch make_batch(std::span<const logitstore::StreamItem> items) {
    if (items.empty()) {
        throw Error("make_batch: no chunks");
    }
    Batch b;
    b.targets.k = items.front().k;
    for (const auto& it : items) {
        if (it.k != b.targets.k) {
            throw Error("make_batch: mixed K");
        }
        b.input.append(it.chunk.tokens, it.chunk.doc_boundaries);
        append_labels(it.chunk, b.targets);
        b.targets.indices.insert(b.targets.indices.end(), it.indices.begin(), it.indices.end());
        b.targets.probs.insert(b.targets.probs.end(), it.probs.begin(), it.probs.end());
        b.tokens += it.chunk.tokens.size();
    }
    return b;
}

Batch make_live_batch(std::span<const logitstore::TokenChunk> chunks,
                      const model::ModelParams<float>& teacher, std::size_t k) {
    const auto records = logitstore::teacher_records(teacher, chunks, k);
    std::vector<logitstore::StreamItem> items;
    std::size_t row = 0;
    for (const auto& c : chunks) {
        logitstore::StreamItem it;
        it.chunk = c;
        it.k = static_cast<std::uint32_t>(k);
        for (std::size_t t = 0; t < c.tokens.size(); ++t, ++row) {
            const auto& r = records[row];
            it.indices.insert(it.indices.end(), r.indices.begin(), r.indices.end());
            it.probs.insert(it.probs.end(), r.probs.begin(), r.probs.end());
        }
        items.push_back(std::move(it));
    }
    return make_batch(items);
}

}  // namespace kdlab::distill
