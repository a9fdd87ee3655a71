#pragma once

#include <array>
#include <cstdint>

#include "volseg/volume.hpp"

namespace volseg {

using Mat3 = std::array<std::array<double, 3>, 3>;
using Vec3 = std::array<double, 3>;

struct Moments {
    Vec3 centroid{};              // exact rational coord_sum / count, as double
    Mat3 covariance{};            // mean outer product of centered coordinates
    uint64_t count = 0;           // foreground voxels
    std::array<int64_t, 3> coord_sum{};  // integer coordinate sums (exact)
};

struct PoseTransform {
    Mat3 rotation{};  // orthonormal, det +1; rows are the canonical axes
    Vec3 centroid{};
    // Exact centroid split: centroid = quot + rem/count per axis, 0 <= rem < count.
    // Keeps resampling exactly translation-invariant.
    std::array<int64_t, 3> centroid_quot{};
    std::array<int64_t, 3> centroid_rem{};
    uint64_t count = 0;
    std::array<uint32_t, 3> out_dims{};
    bool degenerate = false;  // eigenvalue gap below 1e-9, ordering fell back
};

// Rows of `vectors` are the eigenvectors; eigenvalues unsorted.
// Cyclic Jacobi sweeps; converges to ~1e-15 off-diagonal mass.
void eigen_symmetric3(const Mat3& a, Vec3& eigenvalues, Mat3& vectors);

// Throws DegenerateMask for empty masks, fewer than 4 foreground voxels, or
// rank-deficient covariance (smallest eigenvalue <= 1e-12).
Moments foreground_moments(const Volume& mask);

// Eigenvectors sorted by descending eigenvalue; signs fixed so the third
// central moment along each axis is >= 0 (farthest-voxel tie-break within
// 1e-9); det forced to +1 by negating the last row if needed.
PoseTransform canonical_rotation(const Moments& moments, const Volume& mask);

// Inverse-mapping nearest-neighbor resampling into out_dims (rotation and
// translation only, no scaling).
Volume resample_canonical(const Volume& mask, const PoseTransform& transform);

Volume canonicalize(const Volume& mask, std::array<uint32_t, 3> out_dims);

}  // namespace volseg
