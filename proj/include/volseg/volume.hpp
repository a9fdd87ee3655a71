#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "volseg/errors.hpp"

namespace volseg {

enum class Dtype : uint8_t { scalar32 = 0, label8 = 1 };

// Dense 3D grid, x-fastest order: data[x + dx*(y + dy*z)].
struct Volume {
    std::array<uint32_t, 3> dims{0, 0, 0};           // x, y, z (voxels)
    std::array<float, 3> spacing{0.05f, 0.05f, 0.05f};  // mm per voxel
    Dtype dtype = Dtype::scalar32;
    std::vector<float> scalars;   // used when dtype == scalar32
    std::vector<uint8_t> labels;  // used when dtype == label8, values in {0,1}

    static Volume make_scalar(std::array<uint32_t, 3> dims,
                              std::array<float, 3> spacing = {0.05f, 0.05f, 0.05f});
    static Volume make_label(std::array<uint32_t, 3> dims,
                             std::array<float, 3> spacing = {0.05f, 0.05f, 0.05f});

    size_t voxel_count() const {
        return size_t(dims[0]) * dims[1] * dims[2];
    }
    size_t index(size_t x, size_t y, size_t z) const {
        return x + size_t(dims[0]) * (y + size_t(dims[1]) * z);
    }

    // Throws if any invariant is violated (size mismatch, bad spacing,
    // non-binary label values).
    void validate() const;

    bool operator==(const Volume& other) const = default;
};

struct Window {
    std::array<int64_t, 3> offset{0, 0, 0};  // voxels, non-negative when fitted
    std::array<int64_t, 3> size{0, 0, 0};    // voxels, positive

    bool fits_in(const std::array<uint32_t, 3>& dims) const {
        for (int a = 0; a < 3; ++a) {
            if (offset[a] < 0 || offset[a] + size[a] > int64_t(dims[a])) return false;
        }
        return true;
    }
    // Window center coordinate per axis (real-valued for even sizes).
    std::array<double, 3> center() const {
        return {offset[0] + (size[0] - 1) / 2.0, offset[1] + (size[1] - 1) / 2.0,
                offset[2] + (size[2] - 1) / 2.0};
    }
    bool operator==(const Window& other) const = default;
};

enum class PadPolicy { zero_pad, reject };

// MVF1 container: 4-byte magic, 3x u32 dims, u8 dtype, 3x f32 spacing, payload.
Volume read_volume(const std::string& path);
void write_volume(const Volume& v, const std::string& path);

Volume crop_window(const Volume& v, const Window& w, PadPolicy pad_policy);

// Pastes `patch` (label8) into `dst` at window offset; voxels outside dst are dropped.
void paste_window(Volume& dst, const Volume& patch, const Window& w);

// Per-volume z-score: (v - mean) / max(std, 1e-6).
Volume normalize_intensity(const Volume& v);

}  // namespace volseg
