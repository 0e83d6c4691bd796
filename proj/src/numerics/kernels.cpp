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

#include "kdlab/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace kdlab::numerics {

namespace {

// Lane count chosen so one accumulator block fills a 512-bit register.
template <typename T>
constexpr std::size_t kLanes = 64 / sizeof(T);

template <typename T>
inline T reduce_lanes(T* acc) {
    for (std::size_t w = kLanes<T> / 2; w > 0; w /= 2) {
        for (std::size_t l = 0; l < w; ++l) {
            acc[l] += acc[l + w];
        }
    }
    return acc[0];
}

template <typename T>
inline T dot(const T* a, const T* b, std::size_t k) {
    constexpr std::size_t L = kLanes<T>;
    T acc[L] = {};
    std::size_t i = 0;
    for (; i + L <= k; i += L) {
        for (std::size_t l = 0; l < L; ++l) {
            acc[l] += a[i + l] * b[i + l];
        }
    }
    T tail = 0;
    for (; i < k; ++i) {
        tail += a[i] * b[i];
    }
    return reduce_lanes(acc) + tail;
}

// Four dot products sharing the left operand.
template <typename T>
inline void dot4(const T* a, const T* b0, const T* b1, const T* b2, const T* b3, std::size_t k,
                 T* out) {
    constexpr std::size_t L = kLanes<T>;
    T acc0[L] = {}, acc1[L] = {}, acc2[L] = {}, acc3[L] = {};
    std::size_t i = 0;
    for (; i + L <= k; i += L) {
        for (std::size_t l = 0; l < L; ++l) {
            const T x = a[i + l];
            acc0[l] += x * b0[i + l];
            acc1[l] += x * b1[i + l];
            acc2[l] += x * b2[i + l];
            acc3[l] += x * b3[i + l];
        }
    }
    T t0 = 0, t1 = 0, t2 = 0, t3 = 0;
    for (; i < k; ++i) {
        t0 += a[i] * b0[i];
        t1 += a[i] * b1[i];
        t2 += a[i] * b2[i];
        t3 += a[i] * b3[i];
    }
    out[0] = reduce_lanes(acc0) + t0;
    out[1] = reduce_lanes(acc1) + t1;
    out[2] = reduce_lanes(acc2) + t2;
    out[3] = reduce_lanes(acc3) + t3;
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

}  // namespace

namespace kernels {

template <typename T>
void gemm_nt(std::span<const T> x, std::span<const T> w, std::span<T> y, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate) {
    const T* xp = x.data();
    const T* wp = w.data();
    T* yp = y.data();
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const T* xr = xp + i * k;
        T* yr = yp + i * n;
        std::size_t j = 0;
        T out[4];
        for (; j + 4 <= n; j += 4) {
            dot4(xr, wp + j * k, wp + (j + 1) * k, wp + (j + 2) * k, wp + (j + 3) * k, k, out);
            for (std::size_t t = 0; t < 4; ++t) {
                yr[j + t] = accumulate ? yr[j + t] + out[t] : out[t];
            }
        }
        for (; j < n; ++j) {
            const T d = dot(xr, wp + j * k, k);
            yr[j] = accumulate ? yr[j] + d : d;
        }
    }
}

template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> y, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate) {
    const T* ap = a.data();
    const T* bp = b.data();
    T* yp = y.data();
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        T* yr = yp + i * n;
        if (!accumulate) {
            std::fill(yr, yr + n, T{0});
        }
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T s = ap[i * k + kk];
            if (s != T{0}) {
                axpy(s, bp + kk * n, yr, n);
            }
        }
    }
}

template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> y, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate) {
    const T* ap = a.data();
    const T* bp = b.data();
    T* yp = y.data();
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        T* yr = yp + i * n;
        if (!accumulate) {
            std::fill(yr, yr + n, T{0});
        }
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T s = ap[kk * m + i];
            if (s != T{0}) {
                axpy(s, bp + kk * n, yr, n);
            }
        }
    }
}

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const std::uint32_t> seg_start, const AttentionShape& shape,
                       T scale, std::span<T> out, std::span<T> probs) {
    const std::size_t rows = shape.rows;
    const std::size_t d = shape.head_dim;
    const std::size_t group = shape.q_heads / shape.kv_heads;
    const std::size_t q_stride = shape.q_heads * d;
    const std::size_t kv_stride = shape.kv_heads * d;
    const auto total = static_cast<std::ptrdiff_t>(shape.q_heads * rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < total; ++t) {
        const std::size_t h = static_cast<std::size_t>(t) / rows;
        const std::size_t i = static_cast<std::size_t>(t) % rows;
        const std::size_t g = h / group;
        const std::size_t s = seg_start[i];
        const std::size_t len = i - s + 1;
        const T* qr = q.data() + i * q_stride + h * d;
        T* p = probs.data() + (h * rows + i) * shape.window;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
            p[j] = scale * dot(qr, k.data() + (s + j) * kv_stride + g * d, d);
            mx = std::max(mx, p[j]);
        }
        T sum = 0;
        for (std::size_t j = 0; j < len; ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
        }
        const T inv = T{1} / sum;
        for (std::size_t j = 0; j < len; ++j) {
            p[j] *= inv;
        }
        std::fill(p + len, p + shape.window, T{0});
        T* o = out.data() + i * q_stride + h * d;
        std::fill(o, o + d, T{0});
        for (std::size_t j = 0; j < len; ++j) {
            axpy(p[j], v.data() + (s + j) * kv_stride + g * d, o, d);
        }
    }
}

template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const std::uint32_t> seg_start, const AttentionShape& shape,
                        T scale, std::span<const T> probs, std::span<const T> dout,
                        std::span<T> dq, std::span<T> dk, std::span<T> dv) {
    const std::size_t rows = shape.rows;
    const std::size_t d = shape.head_dim;
    const std::size_t group = shape.q_heads / shape.kv_heads;
    const std::size_t q_stride = shape.q_heads * d;
    const std::size_t kv_stride = shape.kv_heads * d;
    const auto kv_heads = static_cast<std::ptrdiff_t>(shape.kv_heads);
    // dk/dv rows are shared by every query head of a group, so work is split
    // by kv head.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t gg = 0; gg < kv_heads; ++gg) {
        const auto g = static_cast<std::size_t>(gg);
        std::vector<T> ds(shape.window);
        for (std::size_t h = g * group; h < (g + 1) * group; ++h) {
            for (std::size_t i = 0; i < rows; ++i) {
                const std::size_t s = seg_start[i];
                const std::size_t len = i - s + 1;
                const T* p = probs.data() + (h * rows + i) * shape.window;
                const T* go = dout.data() + i * q_stride + h * d;
                const T* qr = q.data() + i * q_stride + h * d;
                T* gq = dq.data() + i * q_stride + h * d;
                T weighted = 0;
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t off = (s + j) * kv_stride + g * d;
                    axpy(p[j], go, dv.data() + off, d);
                    ds[j] = dot(go, v.data() + off, d);
                    weighted += p[j] * ds[j];
                }
                for (std::size_t j = 0; j < len; ++j) {
                    const T coef = scale * p[j] * (ds[j] - weighted);
                    const std::size_t off = (s + j) * kv_stride + g * d;
                    axpy(coef, k.data() + off, gq, d);
                    axpy(coef, qr, dk.data() + off, d);
                }
            }
        }
    }
}

}  // namespace kernels

namespace reference {

template <typename T>
void gemm_nt(std::span<const T> x, std::span<const T> w, std::span<T> y, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T s = 0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                s += x[i * k + kk] * w[j * k + kk];
            }
            y[i * n + j] = accumulate ? y[i * n + j] + s : s;
        }
    }
}

template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> y, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T s = 0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                s += a[i * k + kk] * b[kk * n + j];
            }
            y[i * n + j] = accumulate ? y[i * n + j] + s : s;
        }
    }
}

template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> y, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T s = 0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                s += a[kk * m + i] * b[kk * n + j];
            }
            y[i * n + j] = accumulate ? y[i * n + j] + s : s;
        }
    }
}

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const std::uint32_t> seg_start, const AttentionShape& shape,
                       T scale, std::span<T> out) {
    const std::size_t rows = shape.rows;
    const std::size_t d = shape.head_dim;
    const std::size_t group = shape.q_heads / shape.kv_heads;
    const std::size_t q_stride = shape.q_heads * d;
    const std::size_t kv_stride = shape.kv_heads * d;
    const T masked = static_cast<T>(-1e9);
    std::vector<T> scores(rows);
    for (std::size_t h = 0; h < shape.q_heads; ++h) {
        const std::size_t g = h / group;
        for (std::size_t i = 0; i < rows; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < rows; ++j) {
                T s = 0;
                for (std::size_t t = 0; t < d; ++t) {
                    s += q[i * q_stride + h * d + t] * k[j * kv_stride + g * d + t];
                }
                const bool allowed = j <= i && j >= seg_start[i];
                scores[j] = scale * s + (allowed ? T{0} : masked);
                mx = std::max(mx, scores[j]);
            }
            T sum = 0;
            for (std::size_t j = 0; j < rows; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                sum += scores[j];
            }
            for (std::size_t t = 0; t < d; ++t) {
                T acc = 0;
                for (std::size_t j = 0; j < rows; ++j) {
                    acc += scores[j] / sum * v[j * kv_stride + g * d + t];
                }
                out[i * q_stride + h * d + t] = acc;
            }
        }
    }
}

}  // namespace reference

#define KDLAB_INSTANTIATE_KERNELS(T)                                                            \
    template void kernels::gemm_nt<T>(std::span<const T>, std::span<const T>, std::span<T>,     \
                                      std::size_t, std::size_t, std::size_t, bool);             \
    template void kernels::gemm_nn<T>(std::span<const T>, std::span<const T>, std::span<T>,     \
                                      std::size_t, std::size_t, std::size_t, bool);             \
    template void kernels::gemm_tn<T>(std::span<const T>, std::span<const T>, std::span<T>,     \
                                      std::size_t, std::size_t, std::size_t, bool);             \
    template void kernels::attention_forward<T>(                                                \
        std::span<const T>, std::span<const T>, std::span<const T>,                             \
        std::span<const std::uint32_t>, const AttentionShape&, T, std::span<T>, std::span<T>);  \
    template void kernels::attention_backward<T>(                                               \
        std::span<const T>, std::span<const T>, std::span<const T>,                             \
        std::span<const std::uint32_t>, const AttentionShape&, T, std::span<const T>,           \
        std::span<const T>, std::span<T>, std::span<T>, std::span<T>);                          \
    template void reference::gemm_nt<T>(std::span<const T>, std::span<const T>, std::span<T>,   \
                                        std::size_t, std::size_t, std::size_t, bool);           \
    template void reference::gemm_nn<T>(std::span<const T>, std::span<const T>, std::span<T>,   \
                                        std::size_t, std::size_t, std::size_t, bool);           \
    template void reference::gemm_tn<T>(std::span<const T>, std::span<const T>, std::span<T>,   \
                                        std::size_t, std::size_t, std::size_t, bool);           \
    template void reference::attention_forward<T>(                                              \
        std::span<const T>, std::span<const T>, std::span<const T>,                             \
        std::span<const std::uint32_t>, const AttentionShape&, T, std::span<T>);

KDLAB_INSTANTIATE_KERNELS(float)
KDLAB_INSTANTIATE_KERNELS(double)

#undef KDLAB_INSTANTIATE_KERNELS

}  // namespace kdlab::numerics
