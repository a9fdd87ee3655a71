#include "volseg/pose.hpp"

#include <algorithm>
#include <cmath>

namespace volseg {

namespace {

double det3(const Mat3& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

// Exact centered coordinate numerators: n*p - sum (per axis, integer).
struct CenteredIter {
    const Volume& mask;
    const Moments& m;

    template <typename Fn>
    void for_each(Fn fn) const {
        size_t idx = 0;
        for (uint32_t z = 0; z < mask.dims[2]; ++z) {
            for (uint32_t y = 0; y < mask.dims[1]; ++y) {
                for (uint32_t x = 0; x < mask.dims[0]; ++x, ++idx) {
                    if (!mask.labels[idx]) continue;
                    int64_t n = int64_t(m.count);
                    fn(idx, std::array<int64_t, 3>{n * x - m.coord_sum[0],
                                                   n * y - m.coord_sum[1],
                                                   n * z - m.coord_sum[2]});
                }
            }
        }
    }
};

}  // namespace

void eigen_symmetric3(const Mat3& a, Vec3& eigenvalues, Mat3& vectors) {
    Mat3 m = a;
    Mat3 v = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = std::abs(m[0][1]) + std::abs(m[0][2]) + std::abs(m[1][2]);
        if (off < 1e-300) break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(m[p][q]) < 1e-300) continue;
                double theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < 3; ++k) {
                    double mkp = m[k][p], mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for (int k = 0; k < 3; ++k) {
                    double mpk = m[p][k], mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                    double vpk = v[p][k], vqk = v[q][k];
                    v[p][k] = c * vpk - s * vqk;
                    v[q][k] = s * vpk + c * vqk;
                }
            }
        }
    }
    for (int i = 0; i < 3; ++i) {
        eigenvalues[size_t(i)] = m[size_t(i)][size_t(i)];
        vectors[size_t(i)] = v[size_t(i)];
    }
}

Moments foreground_moments(const Volume& mask) {
    if (mask.dtype != Dtype::label8) throw DegenerateMask("mask must be label8");
    Moments m;
    size_t idx = 0;
    for (uint32_t z = 0; z < mask.dims[2]; ++z) {
        for (uint32_t y = 0; y < mask.dims[1]; ++y) {
            for (uint32_t x = 0; x < mask.dims[0]; ++x, ++idx) {
                if (!mask.labels[idx]) continue;
                ++m.count;
                m.coord_sum[0] += x;
                m.coord_sum[1] += y;
                m.coord_sum[2] += z;
            }
        }
    }
    if (m.count == 0) throw DegenerateMask("empty mask");
    if (m.count < 4) throw DegenerateMask("fewer than 4 foreground voxels");

    for (int a = 0; a < 3; ++a) {
        m.centroid[size_t(a)] = double(m.coord_sum[size_t(a)]) / double(m.count);
    }

    // cov = (1/n^3) * sum over voxels of (n*p - S)(n*p - S)^T, exact in
    // integers up to the final division, hence exactly translation invariant.
    __int128 acc[3][3] = {};
    CenteredIter{mask, m}.for_each([&](size_t, const std::array<int64_t, 3>& d) {
        for (int i = 0; i < 3; ++i) {
            for (int j = i; j < 3; ++j) {
                acc[i][j] += __int128(d[size_t(i)]) * d[size_t(j)];
            }
        }
    });
    double n3 = double(m.count) * double(m.count) * double(m.count);
    for (int i = 0; i < 3; ++i) {
        for (int j = i; j < 3; ++j) {
            double v = double(static_cast<long double>(acc[i][j]) /
                              static_cast<long double>(n3));
            m.covariance[size_t(i)][size_t(j)] = v;
            m.covariance[size_t(j)][size_t(i)] = v;
        }
    }

    Vec3 eigenvalues;
    Mat3 vectors;
    eigen_symmetric3(m.covariance, eigenvalues, vectors);
    double min_ev = std::min({eigenvalues[0], eigenvalues[1], eigenvalues[2]});
    if (min_ev <= 1e-12) throw DegenerateMask("rank-deficient covariance");
    return m;
}

PoseTransform canonical_rotation(const Moments& moments, const Volume& mask) {
    Vec3 eigenvalues;
    Mat3 vectors;
    eigen_symmetric3(moments.covariance, eigenvalues, vectors);

    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (eigenvalues[size_t(a)] != eigenvalues[size_t(b)]) {
            return eigenvalues[size_t(a)] > eigenvalues[size_t(b)];
        }
        return a < b;  // axis-index tie-break
    });

    PoseTransform t;
    t.count = moments.count;
    t.centroid = moments.centroid;
    for (int a = 0; a < 3; ++a) {
        int64_t n = int64_t(moments.count);
        int64_t s = moments.coord_sum[size_t(a)];
        t.centroid_quot[size_t(a)] = s / n;
        t.centroid_rem[size_t(a)] = s % n;
    }
    for (int i = 0; i < 3; ++i) t.rotation[size_t(i)] = vectors[size_t(order[size_t(i)])];

    double g01 = eigenvalues[size_t(order[0])] - eigenvalues[size_t(order[1])];
    double g12 = eigenvalues[size_t(order[1])] - eigenvalues[size_t(order[2])];
    t.degenerate = g01 < 1e-9 || g12 < 1e-9;

    // Sign disambiguation per axis: third central moment along the axis must
    // be >= 0; within 1e-9 of zero, the farthest foreground voxel from the
    // centroid (ties: lowest linear index) gets a non-negative coordinate.
    const double n = double(moments.count);
    Vec3 skew{};
    std::array<double, 3> far_coord{};
    double far_dist2 = -1.0;
    size_t far_idx = 0;
    CenteredIter{mask, moments}.for_each([&](size_t idx, const std::array<int64_t, 3>& dn) {
        Vec3 d{double(dn[0]) / n, double(dn[1]) / n, double(dn[2]) / n};
        double dist2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        for (int i = 0; i < 3; ++i) {
            const Vec3& r = t.rotation[size_t(i)];
            double proj = r[0] * d[0] + r[1] * d[1] + r[2] * d[2];
            skew[size_t(i)] += proj * proj * proj;
        }
        if (dist2 > far_dist2) {
            far_dist2 = dist2;
            far_idx = idx;
            for (int i = 0; i < 3; ++i) {
                const Vec3& r = t.rotation[size_t(i)];
                far_coord[size_t(i)] = r[0] * d[0] + r[1] * d[1] + r[2] * d[2];
            }
        }
    });
    (void)far_idx;
    for (int i = 0; i < 3; ++i) skew[size_t(i)] /= n;

    for (int i = 0; i < 3; ++i) {
        bool flip;
        if (std::abs(skew[size_t(i)]) > 1e-9) {
            flip = skew[size_t(i)] < 0.0;
        } else {
            flip = far_coord[size_t(i)] < 0.0;
        }
        if (flip) {
            for (int k = 0; k < 3; ++k) t.rotation[size_t(i)][size_t(k)] *= -1.0;
        }
    }

    if (det3(t.rotation) < 0.0) {
        for (int k = 0; k < 3; ++k) t.rotation[2][size_t(k)] *= -1.0;
    }
    return t;
}

Volume resample_canonical(const Volume& mask, const PoseTransform& transform) {
    Volume out = Volume::make_label(transform.out_dims, mask.spacing);
    const Mat3& r = transform.rotation;
    const double n = double(transform.count);
    Vec3 out_center{(transform.out_dims[0] - 1) / 2.0, (transform.out_dims[1] - 1) / 2.0,
                    (transform.out_dims[2] - 1) / 2.0};

    size_t idx = 0;
    for (uint32_t z = 0; z < out.dims[2]; ++z) {
        for (uint32_t y = 0; y < out.dims[1]; ++y) {
            for (uint32_t x = 0; x < out.dims[0]; ++x, ++idx) {
                Vec3 o{x - out_center[0], y - out_center[1], z - out_center[2]};
                std::array<int64_t, 3> src{};
                bool inside = true;
                for (int a = 0; a < 3 && inside; ++a) {
                    // source = R^T * o + centroid; the integer part of the
                    // centroid is added after rounding so integer translations
                    // of the input shift the sampling grid exactly.
                    double frac = r[0][size_t(a)] * o[0] + r[1][size_t(a)] * o[1] +
                                  r[2][size_t(a)] * o[2] +
                                  double(transform.centroid_rem[size_t(a)]) / n;
                    src[size_t(a)] = std::llround(frac) + transform.centroid_quot[size_t(a)];
                    inside = src[size_t(a)] >= 0 &&
                             src[size_t(a)] < int64_t(mask.dims[size_t(a)]);
                }
                if (inside) {
                    out.labels[idx] = mask.labels[mask.index(
                        size_t(src[0]), size_t(src[1]), size_t(src[2]))];
                }
            }
        }
    }
    return out;
}

Volume canonicalize(const Volume& mask, std::array<uint32_t, 3> out_dims) {
    Moments m = foreground_moments(mask);
    PoseTransform t = canonical_rotation(m, mask);
    t.out_dims = out_dims;
    return resample_canonical(mask, t);
}

}  // namespace volseg
