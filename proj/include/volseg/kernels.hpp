#pragma once

// Dense 3D kernels. Each kernel has an OpenMP-parallel implementation whose
// per-element accumulation order is identical to the serial reference, so
// outputs are bit-identical for any thread count. The *_ref variants are the
// plain triple-loop forms kept for testing and benchmarking.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "volseg/tensor.hpp"

namespace volseg::kernels {

// x: [N,C,D,H,W], w: [K,C,k,k,k], b: [K], pad = (k-1)/2, stride 1.
// out: [N,K,D,H,W].
template <typename T>
void conv3d_forward_ref(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                        Tensor<T>& out) {
    const size_t N = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3],
                 W = x.shape[4];
    const size_t K = w.shape[0], ks = w.shape[2];
    const int64_t pad = int64_t(ks - 1) / 2;
    for (size_t n = 0; n < N; ++n) {
        for (size_t k = 0; k < K; ++k) {
            for (size_t z = 0; z < D; ++z) {
                for (size_t y = 0; y < H; ++y) {
                    for (size_t xo = 0; xo < W; ++xo) {
                        T acc = b.data[k];
                        for (size_t c = 0; c < C; ++c) {
                            for (size_t dz = 0; dz < ks; ++dz) {
                                int64_t zi = int64_t(z) + int64_t(dz) - pad;
                                if (zi < 0 || zi >= int64_t(D)) continue;
                                for (size_t dy = 0; dy < ks; ++dy) {
                                    int64_t yi = int64_t(y) + int64_t(dy) - pad;
                                    if (yi < 0 || yi >= int64_t(H)) continue;
                                    for (size_t dx = 0; dx < ks; ++dx) {
                                        int64_t xi = int64_t(xo) + int64_t(dx) - pad;
                                        if (xi < 0 || xi >= int64_t(W)) continue;
                                        T wv = w.data[(((k * C + c) * ks + dz) * ks + dy) * ks + dx];
                                        T xv = x.data[(((n * C + c) * D + size_t(zi)) * H +
                                                       size_t(yi)) * W + size_t(xi)];
                                        acc += wv * xv;
                                    }
                                }
                            }
                        }
                        out.data[(((n * K + k) * D + z) * H + y) * W + xo] = acc;
                    }
                }
            }
        }
    }
}

// Row-vectorized forward; accumulation order per output element matches
// conv3d_forward_ref (c, dz, dy, dx) exactly.
template <typename T>
void conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                    Tensor<T>& out) {
    const size_t N = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3],
                 W = x.shape[4];
    const size_t K = w.shape[0], ks = w.shape[2];
    const int64_t pad = int64_t(ks - 1) / 2;
    const int64_t NK = int64_t(N * K);

#pragma omp parallel for schedule(static)
    for (int64_t nk = 0; nk < NK; ++nk) {
        const size_t n = size_t(nk) / K, k = size_t(nk) % K;
        for (size_t z = 0; z < D; ++z) {
            for (size_t y = 0; y < H; ++y) {
                T* orow = &out.data[(((n * K + k) * D + z) * H + y) * W];
                for (size_t xo = 0; xo < W; ++xo) orow[xo] = b.data[k];
                for (size_t c = 0; c < C; ++c) {
                    for (size_t dz = 0; dz < ks; ++dz) {
                        int64_t zi = int64_t(z) + int64_t(dz) - pad;
                        if (zi < 0 || zi >= int64_t(D)) continue;
                        for (size_t dy = 0; dy < ks; ++dy) {
                            int64_t yi = int64_t(y) + int64_t(dy) - pad;
                            if (yi < 0 || yi >= int64_t(H)) continue;
                            const T* irow = &x.data[(((n * C + c) * D + size_t(zi)) * H +
                                                     size_t(yi)) * W];
                            for (size_t dx = 0; dx < ks; ++dx) {
                                const int64_t off = int64_t(dx) - pad;
                                const T wv = w.data[(((k * C + c) * ks + dz) * ks + dy) * ks + dx];
                                const int64_t x0 = std::max<int64_t>(0, -off);
                                const int64_t x1 = std::min<int64_t>(int64_t(W), int64_t(W) - off);
                                for (int64_t xo = x0; xo < x1; ++xo) {
                                    orow[xo] += wv * irow[xo + off];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// Gradients. dx, dw, db must be pre-sized; each is fully overwritten.
// Writes per thread are disjoint (dx over input rows, dw/db over output
// channels), so results are thread-count independent.
template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dout,
                     Tensor<T>& dx, Tensor<T>& dw, Tensor<T>& db) {
    const size_t N = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3],
                 W = x.shape[4];
    const size_t K = w.shape[0], ks = w.shape[2];
    const int64_t pad = int64_t(ks - 1) / 2;

#pragma omp parallel for schedule(static)
    for (int64_t k = 0; k < int64_t(K); ++k) {
        // db
        T acc = T(0);
        for (size_t n = 0; n < N; ++n) {
            const T* g = &dout.data[(n * K + size_t(k)) * D * H * W];
            for (size_t i = 0; i < D * H * W; ++i) acc += g[i];
        }
        db.data[size_t(k)] = acc;
        // dw
        for (size_t c = 0; c < C; ++c) {
            for (size_t dz = 0; dz < ks; ++dz) {
                for (size_t dy = 0; dy < ks; ++dy) {
                    for (size_t dx_ = 0; dx_ < ks; ++dx_) {
                        const int64_t off = int64_t(dx_) - pad;
                        T wacc = T(0);
                        for (size_t n = 0; n < N; ++n) {
                            for (size_t z = 0; z < D; ++z) {
                                int64_t zi = int64_t(z) + int64_t(dz) - pad;
                                if (zi < 0 || zi >= int64_t(D)) continue;
                                for (size_t y = 0; y < H; ++y) {
                                    int64_t yi = int64_t(y) + int64_t(dy) - pad;
                                    if (yi < 0 || yi >= int64_t(H)) continue;
                                    const T* grow = &dout.data[(((n * K + size_t(k)) * D + z) * H + y) * W];
                                    const T* irow = &x.data[(((n * C + c) * D + size_t(zi)) * H +
                                                             size_t(yi)) * W];
                                    const int64_t x0 = std::max<int64_t>(0, -off);
                                    const int64_t x1 = std::min<int64_t>(int64_t(W), int64_t(W) - off);
                                    for (int64_t xo = x0; xo < x1; ++xo) {
                                        wacc += grow[xo] * irow[xo + off];
                                    }
                                }
                            }
                        }
                        dw.data[(((size_t(k) * C + c) * ks + dz) * ks + dy) * ks + dx_] = wacc;
                    }
                }
            }
        }
    }

    // dx: gather form, parallel over (n,c,z) slabs.
    const int64_t NCD = int64_t(N * C * D);
#pragma omp parallel for schedule(static)
    for (int64_t ncz = 0; ncz < NCD; ++ncz) {
        const size_t n = size_t(ncz) / (C * D);
        const size_t c = (size_t(ncz) / D) % C;
        const size_t zi = size_t(ncz) % D;
        for (size_t yi = 0; yi < H; ++yi) {
            T* drow = &dx.data[(((n * C + c) * D + zi) * H + yi) * W];
            for (size_t xi = 0; xi < W; ++xi) drow[xi] = T(0);
            for (size_t k = 0; k < K; ++k) {
                for (size_t dz = 0; dz < ks; ++dz) {
                    // output z that pulled from zi via tap dz: z = zi - dz + pad
                    int64_t zo = int64_t(zi) - int64_t(dz) + pad;
                    if (zo < 0 || zo >= int64_t(D)) continue;
                    for (size_t dy = 0; dy < ks; ++dy) {
                        int64_t yo = int64_t(yi) - int64_t(dy) + pad;
                        if (yo < 0 || yo >= int64_t(H)) continue;
                        const T* grow = &dout.data[(((n * K + k) * D + size_t(zo)) * H +
                                                    size_t(yo)) * W];
                        for (size_t dx_ = 0; dx_ < ks; ++dx_) {
                            const int64_t off = int64_t(dx_) - pad;
                            const T wv = w.data[(((k * C + c) * ks + dz) * ks + dy) * ks + dx_];
                            const int64_t xa = std::max<int64_t>(0, off);
                            const int64_t xb = std::min<int64_t>(int64_t(W), int64_t(W) + off);
                            for (int64_t xi = xa; xi < xb; ++xi) {
                                drow[xi] += wv * grow[xi - off];
                            }
                        }
                    }
                }
            }
        }
    }
}

// 2x2x2 max pooling, stride 2. argmax records the input linear index that won
// (lowest linear index on ties).
template <typename T>
void maxpool3d_forward(const Tensor<T>& x, Tensor<T>& out, std::vector<size_t>& argmax) {
    const size_t N = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3],
                 W = x.shape[4];
    const size_t Do = D / 2, Ho = H / 2, Wo = W / 2;
    const int64_t NC = int64_t(N * C);
#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < NC; ++nc) {
        const size_t base_in = size_t(nc) * D * H * W;
        const size_t base_out = size_t(nc) * Do * Ho * Wo;
        for (size_t z = 0; z < Do; ++z) {
            for (size_t y = 0; y < Ho; ++y) {
                for (size_t xo = 0; xo < Wo; ++xo) {
                    T best = -std::numeric_limits<T>::infinity();
                    size_t best_idx = 0;
                    for (size_t dz = 0; dz < 2; ++dz) {
                        for (size_t dy = 0; dy < 2; ++dy) {
                            for (size_t dx = 0; dx < 2; ++dx) {
                                size_t idx = base_in + ((2 * z + dz) * H + (2 * y + dy)) * W +
                                             (2 * xo + dx);
                                if (x.data[idx] > best) {
                                    best = x.data[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    size_t oi = base_out + (z * Ho + y) * Wo + xo;
                    out.data[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }
}

template <typename T>
void maxpool3d_backward(const Tensor<T>& dout, const std::vector<size_t>& argmax,
                        Tensor<T>& dx) {
    std::fill(dx.data.begin(), dx.data.end(), T(0));
    // Pool cells are disjoint; each input index appears at most once in argmax.
    for (size_t i = 0; i < dout.size(); ++i) dx.data[argmax[i]] += dout.data[i];
}

// Nearest-neighbor upsampling by 2 per spatial axis.
template <typename T>
void upsample2_forward(const Tensor<T>& x, Tensor<T>& out) {
    const size_t N = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3],
                 W = x.shape[4];
    const size_t Do = 2 * D, Ho = 2 * H, Wo = 2 * W;
    const int64_t NC = int64_t(N * C);
#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < NC; ++nc) {
        const size_t bi = size_t(nc) * D * H * W;
        const size_t bo = size_t(nc) * Do * Ho * Wo;
        for (size_t z = 0; z < Do; ++z) {
            for (size_t y = 0; y < Ho; ++y) {
                for (size_t xo = 0; xo < Wo; ++xo) {
                    out.data[bo + (z * Ho + y) * Wo + xo] =
                        x.data[bi + ((z / 2) * H + y / 2) * W + xo / 2];
                }
            }
        }
    }
}

template <typename T>
void upsample2_backward(const Tensor<T>& dout, Tensor<T>& dx) {
    const size_t N = dx.shape[0], C = dx.shape[1], D = dx.shape[2], H = dx.shape[3],
                 W = dx.shape[4];
    const size_t Ho = 2 * H, Wo = 2 * W;
    const int64_t NC = int64_t(N * C);
#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < NC; ++nc) {
        const size_t bi = size_t(nc) * D * H * W;
        const size_t bo = size_t(nc) * (2 * D) * Ho * Wo;
        for (size_t z = 0; z < D; ++z) {
            for (size_t y = 0; y < H; ++y) {
                for (size_t xi = 0; xi < W; ++xi) {
                    T acc = T(0);
                    for (size_t dz = 0; dz < 2; ++dz) {
                        for (size_t dy = 0; dy < 2; ++dy) {
                            for (size_t dx = 0; dx < 2; ++dx) {
                                acc += dout.data[bo + ((2 * z + dz) * Ho + (2 * y + dy)) * Wo +
                                                 (2 * xi + dx)];
                            }
                        }
                    }
                    dx.data[bi + (z * H + y) * W + xi] = acc;
                }
            }
        }
    }
}

inline void set_worker_count(int workers) {
#ifdef _OPENMP
    if (workers > 0) omp_set_num_threads(workers);
#else
    (void)workers;
#endif
}

}  // namespace volseg::kernels
