#include "volseg/inference.hpp"

#include <cmath>
#include <deque>

#include "volseg/autodiff.hpp"

namespace volseg {

namespace {

std::vector<int64_t> axis_offsets(uint32_t dim, uint32_t window, uint32_t stride) {
    std::vector<int64_t> offsets;
    int64_t last = int64_t(dim) - int64_t(window);
    for (int64_t o = 0; o <= last; o += stride) offsets.push_back(o);
    if (offsets.empty() || offsets.back() != last) offsets.push_back(last);
    return offsets;
}

Tensor<float> patch_to_tensor(const Volume& patch) {
    // Volume is x-fastest; tensor [1,1,D,H,W] with D=z, H=y, W=x matches the
    // same memory order.
    Tensor<float> t({1, 1, patch.dims[2], patch.dims[1], patch.dims[0]});
    if (patch.dtype == Dtype::scalar32) {
        t.data.assign(patch.scalars.begin(), patch.scalars.end());
    } else {
        for (size_t i = 0; i < patch.labels.size(); ++i) t.data[i] = float(patch.labels[i]);
    }
    return t;
}

double positive_probability(const Volume& patch, const Network& localizer) {
    Tape<float> tape;
    int x = tape.leaf(patch_to_tensor(patch));
    int logits = localizer.forward(tape, x);
    const Tensor<float>& lv = tape.value(logits);
    double z0 = lv.data[0], z1 = lv.data[1];
    double m = std::max(z0, z1);
    double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
    return e1 / (e0 + e1);
}

// round half-down per axis: 2.5 -> 2
int64_t round_half_down(double v) { return int64_t(std::ceil(v - 0.5)); }

}  // namespace

std::vector<Window> scan_windows(std::array<uint32_t, 3> vol_dims,
                                 std::array<uint32_t, 3> window_size, uint32_t stride) {
    for (int a = 0; a < 3; ++a) {
        if (window_size[size_t(a)] > vol_dims[size_t(a)]) {
            throw WindowTooLarge("window exceeds volume dims");
        }
    }
    if (stride == 0) throw WindowTooLarge("stride must be positive");
    std::array<std::vector<int64_t>, 3> offs;
    for (int a = 0; a < 3; ++a) {
        offs[size_t(a)] = axis_offsets(vol_dims[size_t(a)], window_size[size_t(a)], stride);
    }
    std::vector<Window> windows;
    windows.reserve(offs[0].size() * offs[1].size() * offs[2].size());
    for (int64_t oz : offs[2]) {
        for (int64_t oy : offs[1]) {
            for (int64_t ox : offs[0]) {
                windows.push_back(Window{{ox, oy, oz},
                                         {int64_t(window_size[0]), int64_t(window_size[1]),
                                          int64_t(window_size[2])}});
            }
        }
    }
    return windows;
}

LocalizationResult localize_bv(std::array<uint32_t, 3> vol_dims,
                               std::array<uint32_t, 3> window_size, uint32_t stride,
                               const WindowClassifier& classify) {
    std::vector<Window> windows = scan_windows(vol_dims, window_size, stride);
    LocalizationResult res;
    std::array<double, 3> center_sum{};
    double best_prob = -1.0;
    Window best_window;
    for (const Window& w : windows) {
        double p = classify(w);
        if (p > best_prob) {
            best_prob = p;
            best_window = w;
        }
        if (p > 0.5) {
            ++res.positive_count;
            auto c = w.center();
            for (int a = 0; a < 3; ++a) center_sum[size_t(a)] += c[size_t(a)];
        }
    }
    res.max_prob = best_prob;
    if (res.positive_count > 0) {
        for (int a = 0; a < 3; ++a) {
            res.center[size_t(a)] =
                round_half_down(center_sum[size_t(a)] / double(res.positive_count));
        }
    } else {
        res.used_fallback = true;
        auto c = best_window.center();
        for (int a = 0; a < 3; ++a) res.center[size_t(a)] = round_half_down(c[size_t(a)]);
    }
    // Re-center and clamp to fit.
    for (int a = 0; a < 3; ++a) {
        int64_t size = int64_t(window_size[size_t(a)]);
        int64_t off = res.center[size_t(a)] - size / 2;
        off = std::max<int64_t>(0, std::min(off, int64_t(vol_dims[size_t(a)]) - size));
        res.window.offset[size_t(a)] = off;
        res.window.size[size_t(a)] = size;
    }
    return res;
}

LocalizationResult localize_bv(const Volume& normalized, const Network& localizer,
                               uint32_t stride) {
    const auto& wsize = localizer.spec.input_dims;
    if (stride == 0) stride = wsize[0] / 4;
    return localize_bv(normalized.dims, wsize, stride, [&](const Window& w) {
        Volume patch = crop_window(normalized, w, PadPolicy::zero_pad);
        return positive_probability(patch, localizer);
    });
}

ProbabilityMap segment_window(const Volume& patch, const Network& fcn) {
    for (int a = 0; a < 3; ++a) {
        if (patch.dims[size_t(a)] != fcn.spec.input_dims[size_t(a)]) {
            throw ShapeMismatch("segment_window: patch dims do not match network input");
        }
    }
    Tape<float> tape;
    int x = tape.leaf(patch_to_tensor(patch));
    int logits = fcn.forward(tape, x);
    int prob = tape.fg_prob(logits);
    ProbabilityMap map;
    map.dims = patch.dims;
    map.values = tape.value(prob).data;
    return map;
}

std::vector<float> tent_weight_axis(uint32_t size) {
    std::vector<float> w(size);
    for (uint32_t p = 0; p < size; ++p) {
        float t = 1.0f - std::abs(2.0f * (float(p) + 0.5f) / float(size) - 1.0f);
        w[p] = std::max(t, 0.05f);
    }
    return w;
}

Tensor<float> tent_weight(std::array<uint32_t, 3> window_size) {
    auto wx = tent_weight_axis(window_size[0]);
    auto wy = tent_weight_axis(window_size[1]);
    auto wz = tent_weight_axis(window_size[2]);
    Tensor<float> t({window_size[2], window_size[1], window_size[0]});
    size_t i = 0;
    for (uint32_t z = 0; z < window_size[2]; ++z) {
        for (uint32_t y = 0; y < window_size[1]; ++y) {
            for (uint32_t x = 0; x < window_size[0]; ++x, ++i) {
                t.data[i] = wz[z] * wy[y] * wx[x];
            }
        }
    }
    return t;
}

ProbabilityMap blend_predictions(std::array<uint32_t, 3> vol_dims,
                                 const std::vector<Window>& windows,
                                 const std::vector<ProbabilityMap>& maps, BlendMode mode) {
    if (windows.size() != maps.size()) {
        throw ShapeMismatch("blend: window/map count mismatch");
    }
    size_t n = size_t(vol_dims[0]) * vol_dims[1] * vol_dims[2];
    std::vector<double> num(n, 0.0), den(n, 0.0);

    for (size_t wi = 0; wi < windows.size(); ++wi) {
        const Window& w = windows[wi];
        const ProbabilityMap& m = maps[wi];
        for (int a = 0; a < 3; ++a) {
            if (uint32_t(w.size[size_t(a)]) != m.dims[size_t(a)]) {
                throw ShapeMismatch("blend: map does not match window size");
            }
        }
        if (!w.fits_in(vol_dims)) throw WindowOutOfBounds("blend: window not fitted");
        std::array<uint32_t, 3> ws{uint32_t(w.size[0]), uint32_t(w.size[1]),
                                   uint32_t(w.size[2])};
        Tensor<float> weights;
        if (mode == BlendMode::weighted) weights = tent_weight(ws);
        size_t i = 0;
        for (uint32_t z = 0; z < ws[2]; ++z) {
            for (uint32_t y = 0; y < ws[1]; ++y) {
                for (uint32_t x = 0; x < ws[0]; ++x, ++i) {
                    size_t vi = size_t(w.offset[0] + x) +
                                size_t(vol_dims[0]) *
                                    (size_t(w.offset[1] + y) +
                                     size_t(vol_dims[1]) * size_t(w.offset[2] + z));
                    double wt = mode == BlendMode::weighted ? double(weights.data[i]) : 1.0;
                    num[vi] += wt * double(m.values[i]);
                    den[vi] += wt;
                }
            }
        }
    }

    ProbabilityMap out;
    out.dims = vol_dims;
    out.values.resize(n);
    for (size_t i = 0; i < n; ++i) {
        if (den[i] == 0.0) throw UncoveredVoxel("voxel covered by no window");
        out.values[i] = float(num[i] / den[i]);
    }
    return out;
}

Volume binarize(const ProbabilityMap& map, float threshold, bool keep_largest) {
    Volume mask = Volume::make_label(map.dims);
    for (size_t i = 0; i < map.values.size(); ++i) {
        mask.labels[i] = map.values[i] > threshold ? 1 : 0;
    }
    if (keep_largest) mask = keep_largest_component6(mask);
    return mask;
}

Volume keep_largest_component6(const Volume& mask) {
    const auto& d = mask.dims;
    std::vector<int32_t> comp(mask.labels.size(), -1);
    int32_t next = 0;
    size_t best_size = 0;
    int32_t best_comp = -1;
    std::deque<size_t> queue;
    const int64_t steps[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                 {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (size_t start = 0; start < mask.labels.size(); ++start) {
        if (!mask.labels[start] || comp[start] >= 0) continue;
        int32_t id = next++;
        size_t count = 0;
        comp[start] = id;
        queue.push_back(start);
        while (!queue.empty()) {
            size_t cur = queue.front();
            queue.pop_front();
            ++count;
            int64_t x = int64_t(cur % d[0]);
            int64_t y = int64_t((cur / d[0]) % d[1]);
            int64_t z = int64_t(cur / (size_t(d[0]) * d[1]));
            for (const auto& s : steps) {
                int64_t nx = x + s[0], ny = y + s[1], nz = z + s[2];
                if (nx < 0 || ny < 0 || nz < 0 || nx >= d[0] || ny >= d[1] || nz >= d[2]) {
                    continue;
                }
                size_t ni = size_t(nx) + size_t(d[0]) * (size_t(ny) + size_t(d[1]) * size_t(nz));
                if (mask.labels[ni] && comp[ni] < 0) {
                    comp[ni] = id;
                    queue.push_back(ni);
                }
            }
        }
        if (count > best_size) {
            best_size = count;
            best_comp = id;
        }
    }
    Volume out = Volume::make_label(mask.dims, mask.spacing);
    for (size_t i = 0; i < out.labels.size(); ++i) {
        out.labels[i] = (mask.labels[i] && comp[i] == best_comp) ? 1 : 0;
    }
    return out;
}

Volume segment_bv(const Volume& raw, const Network& localizer, const Network& fcn,
                  const SegmentOptions& opts) {
    Volume norm = normalize_intensity(raw);
    uint32_t stride = opts.localizer_stride ? opts.localizer_stride
                                            : localizer.spec.input_dims[0] / 4;
    LocalizationResult loc = localize_bv(norm, localizer, stride);
    Volume patch = crop_window(norm, loc.window, PadPolicy::zero_pad);
    ProbabilityMap prob = segment_window(patch, fcn);
    Volume patch_mask = binarize(prob, opts.threshold, opts.keep_largest_component);
    Volume mask = Volume::make_label(raw.dims, raw.spacing);
    paste_window(mask, patch_mask, loc.window);
    return mask;
}

Volume segment_body(const Volume& raw, const Network& fcn, const SegmentOptions& opts) {
    Volume norm = normalize_intensity(raw);
    const auto& wsize = fcn.spec.input_dims;
    uint32_t stride = opts.body_stride ? opts.body_stride : wsize[0] / 2;
    std::vector<Window> windows = scan_windows(raw.dims, wsize, stride);
    std::vector<ProbabilityMap> maps;
    maps.reserve(windows.size());
    for (const Window& w : windows) {
        maps.push_back(segment_window(crop_window(norm, w, PadPolicy::zero_pad), fcn));
    }
    ProbabilityMap blended = blend_predictions(raw.dims, windows, maps, opts.mode);
    return binarize(blended, opts.threshold, opts.keep_largest_component);
}

}  // namespace volseg
