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

#include "kdlab/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kdlab/numerics/kernels.hpp"

namespace kdlab::numerics {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? " x " : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

template <typename T>
using In = std::span<const Tensor<T>* const>;
template <typename T>
using GradIn = std::span<Tensor<T>* const>;

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
    if (t.rank() != 2) {
        throw Error(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
    }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw Error(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                    shape_string(b.shape()));
    }
}

}  // namespace

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    require_same_shape(tape.value(a), tape.value(b), "add");
    return tape.record(
        "add", {a, b},
        [](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>&) {
            out = *in[0];
            for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] += (*in[1])[i];
            }
        },
        [](In<T>, const Tensor<T>&, const std::vector<Tensor<T>>&, const Tensor<T>& g,
           GradIn<T> gin) {
            for (Tensor<T>* gi : gin) {
                if (gi) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        (*gi)[i] += g[i];
                    }
                }
            }
        });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
    require_same_shape(tape.value(a), tape.value(b), "mul");
    return tape.record(
        "mul", {a, b},
        [](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>&) {
            out = *in[0];
            for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] *= (*in[1])[i];
            }
        },
        [](In<T> in, const Tensor<T>&, const std::vector<Tensor<T>>&, const Tensor<T>& g,
           GradIn<T> gin) {
            for (std::size_t k = 0; k < 2; ++k) {
                if (gin[k]) {
                    const Tensor<T>& other = *in[1 - k];
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        (*gin[k])[i] += g[i] * other[i];
                    }
                }
            }
        });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
    return tape.record(
        "scale", {a},
        [factor](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>&) {
            out = *in[0];
            for (T& v : out.values()) {
                v *= factor;
            }
        },
        [factor](In<T>, const Tensor<T>&, const std::vector<Tensor<T>>&, const Tensor<T>& g,
                 GradIn<T> gin) {
            if (gin[0]) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    (*gin[0])[i] += factor * g[i];
                }
            }
        });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
    return tape.record(
        "sum", {a},
        [](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>&) {
            T s = 0;
            for (T v : in[0]->values()) {
                s += v;
            }
            out = Tensor<T>::scalar(s);
        },
        [](In<T>, const Tensor<T>&, const std::vector<Tensor<T>>&, const Tensor<T>& g,
           GradIn<T> gin) {
            if (gin[0]) {
                for (T& v : gin[0]->values()) {
                    v += g[0];
                }
            }
        });
}

template <typename T>
Var mean(Tape<T>& tape, Var a) {
    const std::size_t n = tape.value(a).size();
    if (n == 0) {
        throw Error("mean: empty tensor");
    }
    return scale(tape, sum(tape, a), T{1} / static_cast<T>(n));
}

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
    const Tensor<T>& av = tape.value(a);
    const Tensor<T>& bv = tape.value(b);
    require_matrix(av, "matmul");
    require_matrix(bv, "matmul");
    if (av.shape()[1] != bv.shape()[0]) {
        throw Error("matmul: inner dimensions differ " + shape_string(av.shape()) + " * " +
                    shape_string(bv.shape()));
    }
    const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
    return tape.record(
        "matmul", {a, b},
        [m, n, k](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>&) {
            out = Tensor<T>(Shape{m, n});
            kernels::gemm_nn<T>(in[0]->span(), in[1]->span(), out.span(), m, n, k, false);
        },
        [m, n, k](In<T> in, const Tensor<T>&, const std::vector<Tensor<T>>&, const Tensor<T>& g,
                  GradIn<T> gin) {
            if (gin[0]) {
                kernels::gemm_nt<T>(g.span(), in[1]->span(), gin[0]->span(), m, k, n, true);
            }
            if (gin[1]) {
                kernels::gemm_tn<T>(in[0]->span(), g.span(), gin[1]->span(), k, n, m, true);
            }
        });
}

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w) {
    const Tensor<T>& xv = tape.value(x);
    const Tensor<T>& wv = tape.value(w);
    require_matrix(xv, "linear");
    require_matrix(wv, "linear");
    if (xv.shape()[1] != wv.shape()[1]) {
        throw Error("linear: input width " + std::to_string(xv.shape()[1]) +
                    " does not match weight " + shape_string(wv.shape()));
    }
    const std::size_t m = xv.shape()[0], k = xv.shape()[1], n = wv.shape()[0];
    return tape.record(
        "linear", {x, w},
        [m, n, k](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>&) {
            out = Tensor<T>(Shape{m, n});
            kernels::gemm_nt<T>(in[0]->span(), in[1]->span(), out.span(), m, n, k, false);
        },
        [m, n, k](In<T> in, const Tensor<T>&, const std::vector<Tensor<T>>&, const Tensor<T>& g,
                  GradIn<T> gin) {
            if (gin[0]) {
                kernels::gemm_nn<T>(g.span(), in[1]->span(), gin[0]->span(), m, k, n, true);
            }
            if (gin[1]) {
                kernels::gemm_tn<T>(g.span(), in[0]->span(), gin[1]->span(), n, k, m, true);
            }
        });
}

template <typename T>
Var rms_norm(Tape<T>& tape, Var x, Var gain, T eps) {
    const Tensor<T>& xv = tape.value(x);
    require_matrix(xv, "rms_norm");
    if (tape.value(gain).size() != xv.cols()) {
        throw Error("rms_norm: gain size does not match row width");
    }
    return tape.record(
        "rms_norm", {x, gain},
        [eps](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>& saved) {
            const Tensor<T>& xt = *in[0];
            const Tensor<T>& gt = *in[1];
            const std::size_t rows = xt.rows(), d = xt.cols();
            out = Tensor<T>(xt.shape());
            saved.assign(1, Tensor<T>(Shape{rows}));
            for (std::size_t r = 0; r < rows; ++r) {
                T ss = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    ss += xt.at(r, j) * xt.at(r, j);
                }
                const T inv = T{1} / std::sqrt(ss / static_cast<T>(d) + eps);
                saved[0][r] = inv;
                for (std::size_t j = 0; j < d; ++j) {
                    out.at(r, j) = xt.at(r, j) * inv * gt[j];
                }
            }
        },
        [](In<T> in, const Tensor<T>&, const std::vector<Tensor<T>>& saved, const Tensor<T>& g,
           GradIn<T> gin) {
            const Tensor<T>& xt = *in[0];
            const Tensor<T>& gt = *in[1];
            const std::size_t rows = xt.rows(), d = xt.cols();
            for (std::size_t r = 0; r < rows; ++r) {
                const T inv = saved[0][r];
                if (gin[1]) {
                    for (std::size_t j = 0; j < d; ++j) {
                        (*gin[1])[j] += g.at(r, j) * xt.at(r, j) * inv;
                    }
                }
                if (gin[0]) {
                    T dot = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        dot += g.at(r, j) * gt[j] * xt.at(r, j);
                    }
                    const T c = inv * inv * inv * dot / static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        gin[0]->at(r, j) += inv * gt[j] * g.at(r, j) - xt.at(r, j) * c;
                    }
                }
            }
        });
}

template <typename T>
Var rope(Tape<T>& tape, Var x, std::span<const std::uint32_t> positions, std::size_t heads,
         std::size_t head_dim, double base) {
    const Tensor<T>& xv = tape.value(x);
    require_matrix(xv, "rope");
    if (xv.cols() != heads * head_dim || head_dim % 2 != 0 || positions.size() != xv.rows()) {
        throw Error("rope: inconsistent geometry");
    }
    const std::size_t half = head_dim / 2;
    const std::size_t rows = xv.rows();
    // cos/sin tables are [rows x half]
    std::vector<T> cs(rows * half), sn(rows * half);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq =
                std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
            const double angle = static_cast<double>(positions[r]) * freq;
            cs[r * half + i] = static_cast<T>(std::cos(angle));
            sn[r * half + i] = static_cast<T>(std::sin(angle));
        }
    }
    auto apply = [=](const Tensor<T>& src, Tensor<T>& dst, bool inverse) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t o = h * head_dim;
                for (std::size_t i = 0; i < half; ++i) {
                    const T c = cs[r * half + i];
                    const T s = inverse ? -sn[r * half + i] : sn[r * half + i];
                    const T a = src.at(r, o + i);
                    const T b = src.at(r, o + i + half);
                    dst.at(r, o + i) += a * c - b * s;
                    dst.at(r, o + i + half) += a * s + b * c;
                }
            }
        }
    };
    return tape.record(
        "rope", {x},
        [apply](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>&) {
            out = Tensor<T>(in[0]->shape());
            apply(*in[0], out, false);
        },
        [apply](In<T>, const Tensor<T>&, const std::vector<Tensor<T>>&, const Tensor<T>& g,
                GradIn<T> gin) {
            if (gin[0]) {
                apply(g, *gin[0], true);
            }
        });
}

template <typename T>
Var attention(Tape<T>& tape, Var q, Var k, Var v, std::span<const std::uint32_t> seg_start,
              std::size_t q_heads, std::size_t kv_heads, std::size_t head_dim) {
    const Tensor<T>& qv = tape.value(q);
    const std::size_t rows = qv.rows();
    if (kv_heads == 0 || q_heads % kv_heads != 0 || qv.cols() != q_heads * head_dim ||
        tape.value(k).cols() != kv_heads * head_dim || tape.value(v).cols() != kv_heads * head_dim ||
        tape.value(k).rows() != rows || tape.value(v).rows() != rows || seg_start.size() != rows) {
        throw Error("attention: inconsistent geometry");
    }
    AttentionShape shape{rows, q_heads, kv_heads, head_dim, 1};
    for (std::size_t i = 0; i < rows; ++i) {
        if (seg_start[i] > i) {
            throw Error("attention: segment start after row " + std::to_string(i));
        }
        shape.window = std::max<std::size_t>(shape.window, i - seg_start[i] + 1);
    }
    std::vector<std::uint32_t> seg(seg_start.begin(), seg_start.end());
    const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));
    return tape.record(
        "attention", {q, k, v},
        [shape, seg, sc](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>& saved) {
            out = Tensor<T>(in[0]->shape());
            saved.assign(1, Tensor<T>(Shape{shape.q_heads, shape.rows, shape.window}));
            kernels::attention_forward<T>(in[0]->span(), in[1]->span(), in[2]->span(), seg, shape,
                                          sc, out.span(), saved[0].span());
        },
        [shape, seg, sc](In<T> in, const Tensor<T>&, const std::vector<Tensor<T>>& saved,
                         const Tensor<T>& g, GradIn<T> gin) {
            // Kernel writes all three; route unused ones to scratch.
            Tensor<T> sq, sk, sv;
            auto target = [](Tensor<T>* gi, Tensor<T>& scratch, const Tensor<T>& like) {
                if (gi) {
                    return gi->span();
                }
                scratch = Tensor<T>(like.shape());
                return scratch.span();
            };
            kernels::attention_backward<T>(in[0]->span(), in[1]->span(), in[2]->span(), seg, shape,
                                           sc, saved[0].span(), g.span(),
                                           target(gin[0], sq, *in[0]), target(gin[1], sk, *in[1]),
                                           target(gin[2], sv, *in[2]));
        });
}

template <typename T>
Var unary(Tape<T>& tape, Var x, const UnaryFn<T>& fn) {
    return tape.record(
        fn.name, {x},
        [f = fn.value](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>&) {
            out = *in[0];
            for (T& v : out.values()) {
                v = f(v);
            }
        },
        [df = fn.derivative](In<T> in, const Tensor<T>&, const std::vector<Tensor<T>>&,
                             const Tensor<T>& g, GradIn<T> gin) {
            if (gin[0]) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    (*gin[0])[i] += g[i] * df((*in[0])[i]);
                }
            }
        });
}

template <typename T>
Var softmax_rows(Tape<T>& tape, Var x) {
    require_matrix(tape.value(x), "softmax_rows");
    return tape.record(
        "softmax_rows", {x},
        [](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>&) {
            out = *in[0];
            for (std::size_t r = 0; r < out.rows(); ++r) {
                auto row = out.row(r);
                const T mx = *std::max_element(row.begin(), row.end());
                T s = 0;
                for (T& v : row) {
                    v = std::exp(v - mx);
                    s += v;
                }
                for (T& v : row) {
                    v /= s;
                }
            }
        },
        [](In<T>, const Tensor<T>& out, const std::vector<Tensor<T>>&, const Tensor<T>& g,
           GradIn<T> gin) {
            if (!gin[0]) {
                return;
            }
            for (std::size_t r = 0; r < out.rows(); ++r) {
                T dot = 0;
                for (std::size_t j = 0; j < out.cols(); ++j) {
                    dot += g.at(r, j) * out.at(r, j);
                }
                for (std::size_t j = 0; j < out.cols(); ++j) {
                    gin[0]->at(r, j) += out.at(r, j) * (g.at(r, j) - dot);
                }
            }
        });
}

template <typename T>
Var log_softmax_gather(Tape<T>& tape, Var logits, std::span<const std::uint32_t> index) {
    const Tensor<T>& lv = tape.value(logits);
    require_matrix(lv, "log_softmax_gather");
    if (index.size() != lv.rows()) {
        throw Error("log_softmax_gather: one index per row required");
    }
    for (std::uint32_t i : index) {
        if (i >= lv.cols()) {
            throw Error("log_softmax_gather: index " + std::to_string(i) + " out of range");
        }
    }
    std::vector<std::uint32_t> idx(index.begin(), index.end());
    return tape.record(
        "log_softmax_gather", {logits},
        [idx](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>& saved) {
            const Tensor<T>& z = *in[0];
            out = Tensor<T>(Shape{z.rows()});
            saved.assign(1, Tensor<T>(Shape{z.rows()}));
            for (std::size_t r = 0; r < z.rows(); ++r) {
                auto row = z.row(r);
                const T mx = *std::max_element(row.begin(), row.end());
                T s = 0;
                for (T v : row) {
                    s += std::exp(v - mx);
                }
                const T lse = mx + std::log(s);
                saved[0][r] = lse;
                out[r] = row[idx[r]] - lse;
            }
        },
        [idx](In<T> in, const Tensor<T>&, const std::vector<Tensor<T>>& saved, const Tensor<T>& g,
              GradIn<T> gin) {
            if (!gin[0]) {
                return;
            }
            const Tensor<T>& z = *in[0];
            for (std::size_t r = 0; r < z.rows(); ++r) {
                for (std::size_t j = 0; j < z.cols(); ++j) {
                    gin[0]->at(r, j) -= g[r] * std::exp(z.at(r, j) - saved[0][r]);
                }
                gin[0]->at(r, idx[r]) += g[r];
            }
        });
}

template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const std::uint32_t> ids) {
    const Tensor<T>& tv = tape.value(table);
    require_matrix(tv, "embedding");
    for (std::uint32_t id : ids) {
        if (id >= tv.rows()) {
            throw Error("embedding: token id " + std::to_string(id) + " >= vocab " +
                        std::to_string(tv.rows()));
        }
    }
    std::vector<std::uint32_t> idx(ids.begin(), ids.end());
    return tape.record(
        "embedding", {table},
        [idx](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>&) {
            const std::size_t d = in[0]->cols();
            out = Tensor<T>(Shape{idx.size(), d});
            for (std::size_t r = 0; r < idx.size(); ++r) {
                std::copy_n(in[0]->row(idx[r]).begin(), d, out.row(r).begin());
            }
        },
        [idx](In<T>, const Tensor<T>&, const std::vector<Tensor<T>>&, const Tensor<T>& g,
              GradIn<T> gin) {
            if (!gin[0]) {
                return;
            }
            for (std::size_t r = 0; r < idx.size(); ++r) {
                auto dst = gin[0]->row(idx[r]);
                auto src = g.row(r);
                for (std::size_t j = 0; j < dst.size(); ++j) {
                    dst[j] += src[j];
                }
            }
        });
}

template <typename T>
Var slice_cols(Tape<T>& tape, Var x, std::size_t begin, std::size_t end) {
    const Tensor<T>& xv = tape.value(x);
    require_matrix(xv, "slice_cols");
    if (begin >= end || end > xv.cols()) {
        throw Error("slice_cols: bad range");
    }
    return tape.record(
        "slice_cols", {x},
        [begin, end](In<T> in, Tensor<T>& out, std::vector<Tensor<T>>&) {
            const Tensor<T>& src = *in[0];
            out = Tensor<T>(Shape{src.rows(), end - begin});
            for (std::size_t r = 0; r < src.rows(); ++r) {
                std::copy(src.row(r).begin() + begin, src.row(r).begin() + end,
                          out.row(r).begin());
            }
        },
        [begin, end](In<T>, const Tensor<T>&, const std::vector<Tensor<T>>&, const Tensor<T>& g,
                     GradIn<T> gin) {
            if (!gin[0]) {
                return;
            }
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t j = begin; j < end; ++j) {
                    gin[0]->at(r, j) += g.at(r, j - begin);
                }
            }
        });
}

#define KDLAB_INSTANTIATE_OPS(T)                                                               \
    template Var add<T>(Tape<T>&, Var, Var);                                                   \
    template Var mul<T>(Tape<T>&, Var, Var);                                                   \
    template Var scale<T>(Tape<T>&, Var, T);                                                   \
    template Var sum<T>(Tape<T>&, Var);                                                        \
    template Var mean<T>(Tape<T>&, Var);                                                       \
    template Var matmul<T>(Tape<T>&, Var, Var);                                                \
    template Var linear<T>(Tape<T>&, Var, Var);                                                \
    template Var rms_norm<T>(Tape<T>&, Var, Var, T);                                           \
    template Var rope<T>(Tape<T>&, Var, std::span<const std::uint32_t>, std::size_t,           \
                         std::size_t, double);                                                 \
    template Var attention<T>(Tape<T>&, Var, Var, Var, std::span<const std::uint32_t>,         \
                              std::size_t, std::size_t, std::size_t);                          \
    template Var unary<T>(Tape<T>&, Var, const UnaryFn<T>&);                                   \
    template Var softmax_rows<T>(Tape<T>&, Var);                                               \
    template Var log_softmax_gather<T>(Tape<T>&, Var, std::span<const std::uint32_t>);         \
    template Var embedding<T>(Tape<T>&, Var, std::span<const std::uint32_t>);                  \
    template Var slice_cols<T>(Tape<T>&, Var, std::size_t, std::size_t);

KDLAB_INSTANTIATE_OPS(float)
KDLAB_INSTANTIATE_OPS(double)

#undef KDLAB_INSTANTIATE_OPS

}  // namespace kdlab::numerics
