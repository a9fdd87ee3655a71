#pragma once

#include <functional>
#include <vector>

#include "volseg/nets.hpp"
#include "volseg/volume.hpp"

namespace volseg {

struct LocalizationResult {
    std::array<int64_t, 3> center{};
    Window window;           // re-centered on `center`, clamped to fit
    size_t positive_count = 0;
    double max_prob = 0.0;   // highest positive-class probability seen
    bool used_fallback = false;  // no positive window; max-prob window used
};

struct ProbabilityMap {
    std::array<uint32_t, 3> dims{};
    std::vector<float> values;  // foreground probability per voxel, x-fastest
};

enum class BlendMode { weighted, uniform };

// Offsets {0, stride, 2*stride, ...} per axis plus a flush final window; every
// voxel is covered by at least one window.
std::vector<Window> scan_windows(std::array<uint32_t, 3> vol_dims,
                                 std::array<uint32_t, 3> window_size, uint32_t stride);

// Positive-class probability of one window, for stubbing in tests.
using WindowClassifier = std::function<double(const Window&)>;

LocalizationResult localize_bv(std::array<uint32_t, 3> vol_dims,
                               std::array<uint32_t, 3> window_size, uint32_t stride,
                               const WindowClassifier& classify);

// Network-backed window classifier over a normalized volume.
LocalizationResult localize_bv(const Volume& normalized, const Network& localizer,
                               uint32_t stride);

ProbabilityMap segment_window(const Volume& patch, const Network& fcn);

// Separable product of per-axis tents: max(1 - |2(p+0.5)/W - 1|, 0.05).
std::vector<float> tent_weight_axis(uint32_t size);
Tensor<float> tent_weight(std::array<uint32_t, 3> window_size);

ProbabilityMap blend_predictions(std::array<uint32_t, 3> vol_dims,
                                 const std::vector<Window>& windows,
                                 const std::vector<ProbabilityMap>& maps, BlendMode mode);

// voxel = 1 iff probability > threshold (strict).
Volume binarize(const ProbabilityMap& map, float threshold = 0.5f,
                bool keep_largest_component = false);

Volume keep_largest_component6(const Volume& mask);

struct SegmentOptions {
    uint32_t localizer_stride = 0;  // 0 -> window/4
    uint32_t body_stride = 0;       // 0 -> window/2
    BlendMode mode = BlendMode::weighted;
    float threshold = 0.5f;
    bool keep_largest_component = false;
};

// localize -> crop (zero_pad) -> segment -> binarize -> paste back.
Volume segment_bv(const Volume& raw, const Network& localizer, const Network& fcn,
                  const SegmentOptions& opts = {});

// scan -> segment per window -> blend -> binarize.
Volume segment_body(const Volume& raw, const Network& fcn, const SegmentOptions& opts = {});

}  // namespace volseg
