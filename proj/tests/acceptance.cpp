// Acceptance suite. Each criterion prints exactly one PASS/FAIL line; the
// exit code is the number of failures. Usage:
//   acceptance <path-to-volseg-cli> [criterion-number]

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "volseg/classify.hpp"
#include "volseg/gradcheck.hpp"
#include "volseg/inference.hpp"
#include "volseg/kernels.hpp"
#include "volseg/metrics.hpp"
#include "volseg/nets.hpp"
#include "volseg/phantom.hpp"
#include "volseg/pose.hpp"
#include "volseg/training.hpp"
#include "volseg/volume.hpp"

namespace fs = std::filesystem;
using namespace volseg;

namespace {

int g_failures = 0;

void report(int criterion, const char* name, bool pass, const std::string& detail) {
    std::printf("%s: criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", criterion, name,
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), f, a, b, c);
    return buf;
}

// ---------------------------------------------------------------- criterion 1

void criterion_gradients() {
    double op_err = 0.0;
    {
        std::mt19937_64 rng(101);
        std::normal_distribution<double> d(0.0, 1.0);
        auto rnd = [&](std::vector<size_t> s) {
            Tensor<double> t(std::move(s));
            for (double& v : t.data) v = d(rng);
            return t;
        };
        Tensor<double> x5 = rnd({1, 2, 4, 4, 4});
        Tensor<double> x2 = rnd({3, 5});
        Tensor<double> w2 = rnd({2, 5});
        Tensor<double> b2 = rnd({2});
        Tensor<double> c5 = rnd({1, 2, 4, 4, 4});
        Tensor<double> cp = rnd({1, 2, 2, 2, 2});
        Tensor<double> c2 = rnd({3, 2});
        op_err = std::max(op_err, grad_check_input([&](Tape<double>& t, int in) {
                              return t.weighted_sum(t.relu(in), c5);
                          }, x5));
        op_err = std::max(op_err, grad_check_input([&](Tape<double>& t, int in) {
                              return t.weighted_sum(t.maxpool3d(in), cp);
                          }, x5));
        op_err = std::max(op_err, grad_check_input([&](Tape<double>& t, int in) {
                              return t.weighted_sum(t.linear(in, t.leaf(w2), t.leaf(b2)), c2);
                          }, x2));
    }

    double net_err = 0.0;
    {
        NetworkSpec loc{NetworkKind::localizer, 2, {16, 16, 16}};
        NetworkSpec fcn{NetworkKind::fcn_segmenter, 2, {8, 8, 8}};
        NetworkSpec cls{NetworkKind::classifier, 2, {8, 8, 8}};
        std::mt19937_64 rng(202);
        std::normal_distribution<double> d(0.0, 1.0);
        auto input = [&](std::array<uint32_t, 3> dims) {
            Tensor<double> t({1, 1, dims[2], dims[1], dims[0]});
            for (double& v : t.data) v = d(rng);
            return t;
        };
        // small step: larger steps can straddle a relu/maxpool kink.
        net_err = std::max(net_err, grad_check_network(build_localizer(loc, 1),
                                                       input(loc.input_dims), 3, 11, 3e-6));
        net_err = std::max(net_err, grad_check_network(build_fcn_segmenter(fcn, 2),
                                                       input(fcn.input_dims), 3, 12, 3e-6));
        net_err = std::max(net_err, grad_check_network(build_classifier(cls, 3),
                                                       input(cls.input_dims), 3, 13, 3e-6));
    }
    bool pass = op_err < 1e-5 && net_err < 1e-3;
    report(1, "gradient fidelity", pass,
           fmt("op max rel err %.2e (< 1e-5), network max rel err %.2e (< 1e-3)", op_err,
               net_err));
}

// ---------------------------------------------------------------- criterion 2

void criterion_conv_oracle() {
    std::mt19937_64 rng(303);
    std::normal_distribution<float> d(0.0f, 1.0f);
    size_t mismatches = 0;
    for (int trial = 0; trial < 50; ++trial) {
        size_t n = 1 + rng() % 2, cin = 1 + rng() % 4, cout = 1 + rng() % 4;
        size_t dz = 1 + rng() % 8, dy = 1 + rng() % 8, dx = 1 + rng() % 8;
        size_t k = (rng() % 2) ? 3 : 1;
        Tensor<float> x({n, cin, dz, dy, dx});
        Tensor<float> w({cout, cin, k, k, k});
        Tensor<float> b({cout});
        for (float& v : x.data) v = d(rng);
        for (float& v : w.data) v = d(rng);
        for (float& v : b.data) v = d(rng);
        Tensor<float> ref({n, cout, dz, dy, dx});
        Tensor<float> opt({n, cout, dz, dy, dx});
        kernels::conv3d_forward_ref(x, w, b, ref);
        kernels::conv3d_forward(x, w, b, opt);
        if (std::memcmp(ref.data.data(), opt.data.data(), ref.size() * sizeof(float)) != 0) {
            ++mismatches;
        }
    }
    report(2, "convolution oracle equivalence", mismatches == 0,
           fmt("%g of 50 random shapes differ bit-for-float (need 0)", double(mismatches)));
}

// ---------------------------------------------------------------- criterion 3

void criterion_blending() {
    std::mt19937_64 rng(404);
    double max_dev = 0.0;
    size_t exact_failures = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::array<uint32_t, 3> dims, win;
        for (int a = 0; a < 3; ++a) {
            dims[size_t(a)] = 6 + uint32_t(rng() % 15);
            win[size_t(a)] = 1 + uint32_t(rng() % dims[size_t(a)]);
        }
        uint32_t stride = 1 + uint32_t(rng() % std::min({win[0], win[1], win[2]}));
        auto windows = scan_windows(dims, win, stride);
        BlendMode mode = (trial % 2) ? BlendMode::weighted : BlendMode::uniform;

        size_t ws = size_t(win[0]) * win[1] * win[2];
        std::vector<ProbabilityMap> ones(windows.size());
        std::vector<ProbabilityMap> consts(windows.size());
        for (size_t i = 0; i < windows.size(); ++i) {
            ones[i].dims = win;
            ones[i].values.assign(ws, 1.0f);
            consts[i].dims = win;
            consts[i].values.assign(ws, 0.37f);
        }
        ProbabilityMap unity = blend_predictions(dims, windows, ones, mode);
        for (float v : unity.values) max_dev = std::max(max_dev, std::abs(double(v) - 1.0));
        ProbabilityMap c = blend_predictions(dims, windows, consts, mode);
        for (float v : c.values) {
            if (v != 0.37f) ++exact_failures;
        }
    }
    bool pass = max_dev <= 1e-6 && exact_failures == 0;
    report(3, "blending partition of unity", pass,
           fmt("max |weight sum - 1| = %.2e (<= 1e-6), %g inexact constant voxels (need 0)",
               max_dev, double(exact_failures)));
}

// ---------------------------------------------------------------- criterion 4

void criterion_localization() {
    std::mt19937_64 rng(505);
    auto mix = [](uint64_t v) {  // splitmix64 finalizer
        v += 0x9e3779b97f4a7c15ull;
        v = (v ^ (v >> 30)) * 0xbf58476d1ce4e5b9ull;
        v = (v ^ (v >> 27)) * 0x94d049bb133111ebull;
        return v ^ (v >> 31);
    };
    size_t mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::array<uint32_t, 3> dims, win;
        for (int a = 0; a < 3; ++a) {
            dims[size_t(a)] = 16 + uint32_t(rng() % 33);
            win[size_t(a)] = 8 + uint32_t(rng() % (dims[size_t(a)] - 7));
        }
        uint32_t stride = 1 + uint32_t(rng() % 8);
        uint64_t case_seed = rng();
        // Sparse positives so the zero-positive fallback is exercised too.
        auto prob_of = [&](const Window& w) {
            uint64_t h = mix(case_seed ^ mix(uint64_t(w.offset[0]) + 0x100 +
                                             (uint64_t(w.offset[1]) << 20) +
                                             (uint64_t(w.offset[2]) << 40)));
            return double(h % 10000) / 10000.0 * 0.6 + (h % 7 == 0 ? 0.4 : 0.0);
        };
        LocalizationResult got = localize_bv(dims, win, stride, prob_of);

        // Independent oracle: re-derive the scan offsets and the averaging rule.
        std::array<std::vector<int64_t>, 3> offs;
        for (int a = 0; a < 3; ++a) {
            int64_t last = int64_t(dims[size_t(a)]) - int64_t(win[size_t(a)]);
            for (int64_t o = 0; o <= last; o += stride) offs[size_t(a)].push_back(o);
            if (offs[size_t(a)].empty() || offs[size_t(a)].back() != last) {
                offs[size_t(a)].push_back(last);
            }
        }
        std::array<double, 3> center_sum{};
        size_t positives = 0;
        double best = -1.0;
        std::array<double, 3> best_center{};
        for (int64_t oz : offs[2]) {
            for (int64_t oy : offs[1]) {
                for (int64_t ox : offs[0]) {
                    Window w{{ox, oy, oz},
                             {int64_t(win[0]), int64_t(win[1]), int64_t(win[2])}};
                    double p = prob_of(w);
                    auto c = w.center();
                    if (p > best) {
                        best = p;
                        best_center = c;
                    }
                    if (p > 0.5) {
                        ++positives;
                        for (int a = 0; a < 3; ++a) center_sum[size_t(a)] += c[size_t(a)];
                    }
                }
            }
        }
        std::array<int64_t, 3> expect{};
        for (int a = 0; a < 3; ++a) {
            double v = positives ? center_sum[size_t(a)] / double(positives)
                                 : best_center[size_t(a)];
            expect[size_t(a)] = int64_t(std::ceil(v - 0.5));  // round half-down
        }
        bool fallback_expect = positives == 0;
        if (got.center != expect || got.positive_count != positives ||
            got.used_fallback != fallback_expect) {
            ++mismatches;
        }
    }
    report(4, "localization rule", mismatches == 0,
           fmt("%g of 100 random cases disagree with the brute-force oracle (need 0)",
               double(mismatches)));
}

// ---------------------------------------------------------------- criterion 5

void add_ellipsoid(Volume& mask, const std::array<double, 3>& c,
                   const std::array<double, 3>& ax) {
    for (uint32_t z = 0; z < mask.dims[2]; ++z) {
        for (uint32_t y = 0; y < mask.dims[1]; ++y) {
            for (uint32_t x = 0; x < mask.dims[0]; ++x) {
                double u = (x - c[0]) / ax[0], v = (y - c[1]) / ax[1],
                       w = (z - c[2]) / ax[2];
                if (u * u + v * v + w * w <= 1.0) mask.labels[mask.index(x, y, z)] = 1;
            }
        }
    }
}

std::vector<std::array<std::array<int, 3>, 3>> proper_rotations24() {
    std::vector<std::array<std::array<int, 3>, 3>> rots;
    int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    int psign[6] = {1, -1, -1, 1, 1, -1};
    for (int p = 0; p < 6; ++p) {
        for (int s = 0; s < 8; ++s) {
            int sg[3] = {(s & 1) ? -1 : 1, (s & 2) ? -1 : 1, (s & 4) ? -1 : 1};
            if (psign[p] * sg[0] * sg[1] * sg[2] != 1) continue;
            std::array<std::array<int, 3>, 3> r{};
            for (int i = 0; i < 3; ++i) r[size_t(i)][size_t(perms[p][i])] = sg[i];
            rots.push_back(r);
        }
    }
    return rots;
}

Volume rotate_mask(const Volume& mask, const std::array<std::array<int, 3>, 3>& r) {
    // p' = R (p - c) + c with c = (dim-1)/2; exact for cubic volumes.
    Volume out = Volume::make_label(mask.dims);
    int64_t two_c = int64_t(mask.dims[0]) - 1;
    for (uint32_t z = 0; z < mask.dims[2]; ++z) {
        for (uint32_t y = 0; y < mask.dims[1]; ++y) {
            for (uint32_t x = 0; x < mask.dims[0]; ++x) {
                if (!mask.labels[mask.index(x, y, z)]) continue;
                int64_t p[3] = {int64_t(x), int64_t(y), int64_t(z)};
                int64_t q[3];
                for (int i = 0; i < 3; ++i) {
                    int64_t acc = 0;  // 2*(p-c) stays integer; divide at the end
                    for (int j = 0; j < 3; ++j) {
                        acc += int64_t(r[size_t(i)][size_t(j)]) * (2 * p[j] - two_c);
                    }
                    q[i] = (acc + two_c) / 2;
                }
                out.labels[out.index(size_t(q[0]), size_t(q[1]), size_t(q[2]))] = 1;
            }
        }
    }
    return out;
}

void criterion_pose() {
    std::mt19937_64 rng(606);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto rots = proper_rotations24();
    const std::array<uint32_t, 3> in_dims{48, 48, 48};
    const std::array<uint32_t, 3> out_dims{32, 32, 32};

    double min_agree = 1.0;
    double max_ortho_dev = 0.0;
    int masks_done = 0;
    int attempts = 0;
    while (masks_done < 50 && attempts < 500) {
        ++attempts;
        Volume mask = Volume::make_label(in_dims);
        // Ellipsoid union: a big anisotropic one plus an offset smaller one.
        std::array<double, 3> c0{24 + 4 * (u(rng) - 0.5), 24 + 4 * (u(rng) - 0.5),
                                 24 + 4 * (u(rng) - 0.5)};
        std::array<double, 3> ax0{5 + 4 * u(rng), 4 + 2 * u(rng), 8 + 4 * u(rng)};
        std::sort(ax0.begin(), ax0.end());
        std::swap(ax0[0], ax0[2]);  // make axis 0 longest to vary orientation below
        add_ellipsoid(mask, c0, ax0);
        std::array<double, 3> c1{c0[0] + ax0[0] * 0.6, c0[1] + 2.0, c0[2] + 2.0};
        add_ellipsoid(mask, c1, {3 + 2 * u(rng), 3 + u(rng), 3 + u(rng)});

        Moments m;
        try {
            m = foreground_moments(mask);
        } catch (const DegenerateMask&) {
            continue;
        }
        PoseTransform t = canonical_rotation(m, mask);
        if (t.degenerate) continue;  // well-conditioned masks only
        ++masks_done;

        Volume base = canonicalize(mask, out_dims);
        for (const auto& r : rots) {
            Volume rotated = rotate_mask(mask, r);
            Volume canon = canonicalize(rotated, out_dims);
            size_t agree = 0;
            for (size_t i = 0; i < canon.labels.size(); ++i) {
                agree += canon.labels[i] == base.labels[i];
            }
            min_agree = std::min(min_agree, double(agree) / double(canon.labels.size()));

            Moments mr = foreground_moments(rotated);
            PoseTransform tr = canonical_rotation(mr, rotated);
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                    double dot = 0.0;
                    for (int k = 0; k < 3; ++k) {
                        dot += tr.rotation[size_t(i)][size_t(k)] *
                               tr.rotation[size_t(j)][size_t(k)];
                    }
                    max_ortho_dev =
                        std::max(max_ortho_dev, std::abs(dot - (i == j ? 1.0 : 0.0)));
                }
            }
            double det = tr.rotation[0][0] * (tr.rotation[1][1] * tr.rotation[2][2] -
                                              tr.rotation[1][2] * tr.rotation[2][1]) -
                         tr.rotation[0][1] * (tr.rotation[1][0] * tr.rotation[2][2] -
                                              tr.rotation[1][2] * tr.rotation[2][0]) +
                         tr.rotation[0][2] * (tr.rotation[1][0] * tr.rotation[2][1] -
                                              tr.rotation[1][1] * tr.rotation[2][0]);
            max_ortho_dev = std::max(max_ortho_dev, std::abs(det - 1.0));
        }
    }
    bool pass = masks_done == 50 && min_agree >= 0.99 && max_ortho_dev <= 1e-9;
    report(5, "pose invariance", pass,
           fmt("worst 90-degree agreement %.4f (>= 0.99) over 50 masks x 24 rotations, "
               "max orthonormality/det deviation %.2e (<= 1e-9)",
               min_agree, max_ortho_dev));
}

// ---------------------------------------------------------------- criterion 6

void criterion_metrics() {
    double err = 0.0;
    Volume a = Volume::make_label({4, 1, 1});
    Volume b = Volume::make_label({4, 1, 1});
    err = std::max(err, std::abs(dice(a, b) - 1.0));
    a.labels = {1, 1, 0, 0};
    b.labels = {0, 0, 1, 1};
    err = std::max(err, std::abs(dice(a, b) - 0.0));
    b.labels = {1, 0, 1, 0};
    err = std::max(err, std::abs(dice(a, b) - 0.5));

    ConfusionMatrix m{92, 11, 12, 451};
    MetricSummary s = summarize(m);
    err = std::max(err, std::abs(s.accuracy - 543.0 / 566.0));
    err = std::max(err, std::abs(s.accuracy - 0.959364) > 1e-6 ? 1.0 : 0.0);
    err = std::max(err, std::abs(*s.sensitivity - 92.0 / 103.0));
    err = std::max(err, std::abs(*s.specificity - 451.0 / 463.0));
    report(6, "metric exactness", err <= 1e-9,
           fmt("max deviation %.2e (<= 1e-9) across dice cases and the 566-case matrix",
               err));
}

// --------------------------------------------------------- criteria 7 / 8 / 9

struct PhantomSet {
    std::vector<PhantomSample> samples;
};

PhantomSet make_phantoms(size_t n, double mutant_fraction, uint64_t base_seed) {
    PhantomConfig cfg;  // 64^3 defaults
    PhantomSet set;
    size_t mutant_quota = size_t(std::llround(double(n) * mutant_fraction));
    size_t mutants = 0;
    for (size_t i = 0; i < n; ++i) {
        size_t want = (i + 1) * mutant_quota / n;
        ClassLabel label = mutants < want ? ClassLabel::mutant : ClassLabel::normal;
        if (label == ClassLabel::mutant) ++mutants;
        PhantomConfig item = cfg;
        item.seed = base_seed + i;
        set.samples.push_back(generate_phantom(item, label));
    }
    return set;
}

void criterion_segmentation() {
    const uint64_t kDatasetSeed = 4242;
    PhantomSet data = make_phantoms(80, 0.5, kDatasetSeed);

    // Body segmenter: sliding-window FCN.
    NetworkSpec body_spec{NetworkKind::fcn_segmenter, 4, {32, 32, 32}};
    Network body_net = build_fcn_segmenter(body_spec, 7);
    {
        std::vector<PatchPair> pairs;
        for (size_t i = 0; i < 60; ++i) {
            auto p = extract_body_patches(normalize_intensity(data.samples[i].image),
                                          data.samples[i].body_mask, body_spec.input_dims,
                                          32);
            pairs.insert(pairs.end(), p.begin(), p.end());
        }
        TrainConfig tc;
        tc.epochs = 1;
        tc.batch_size = 2;
        tc.lr = 0.02f;
        tc.seed = 7;
        train_segmenter(pairs, body_net, tc);
    }
    double body_dice_sum = 0.0;
    {
        SegmentOptions opts;
        opts.body_stride = 16;
        for (size_t i = 60; i < 80; ++i) {
            Volume pred = segment_body(data.samples[i].image, body_net, opts);
            body_dice_sum += dice(data.samples[i].body_mask, pred);
        }
    }
    double body_mean = body_dice_sum / 20.0;

    // BV localizer + FCN.
    NetworkSpec loc_spec{NetworkKind::localizer, 4, {32, 32, 32}};
    Network loc_net = build_localizer(loc_spec, 9);
    {
        std::mt19937_64 rng(9);
        std::vector<Volume> norm;
        std::vector<LabeledWindow> windows;
        for (size_t i = 0; i < 60; ++i) {
            norm.push_back(normalize_intensity(data.samples[i].image));
            auto scan = scan_windows(data.samples[i].image.dims, loc_spec.input_dims, 16);
            auto labeled = label_windows(data.samples[i].bv_mask, scan, 0.95, i);
            std::vector<LabeledWindow> pos, neg;
            for (auto& lw : labeled) {
                (lw.label == WindowLabel::positive ? pos : neg).push_back(lw);
            }
            std::shuffle(pos.begin(), pos.end(), rng);
            std::shuffle(neg.begin(), neg.end(), rng);
            pos.resize(std::min<size_t>(pos.size(), 6));
            neg.resize(std::min<size_t>(neg.size(), 12));
            windows.insert(windows.end(), pos.begin(), pos.end());
            windows.insert(windows.end(), neg.begin(), neg.end());
        }
        TrainConfig tc;
        tc.epochs = 10;
        tc.batch_size = 4;
        tc.lr = 0.005f;  // higher rates oscillate on this task
        tc.seed = 9;
        train_localizer(norm, windows, loc_net, tc);
    }

    NetworkSpec bv_spec{NetworkKind::fcn_segmenter, 4, {32, 32, 32}};
    Network bv_net = build_fcn_segmenter(bv_spec, 11);
    {
        std::mt19937_64 rng(11);
        std::uniform_int_distribution<int64_t> jit(-4, 4);
        std::vector<PatchPair> pairs;
        for (size_t i = 0; i < 60; ++i) {
            Volume norm = normalize_intensity(data.samples[i].image);
            Moments m = foreground_moments(data.samples[i].bv_mask);
            for (int crop = 0; crop < 4; ++crop) {
                Window w;
                for (int a = 0; a < 3; ++a) {
                    int64_t size = int64_t(bv_spec.input_dims[size_t(a)]);
                    int64_t off =
                        int64_t(std::llround(m.centroid[size_t(a)])) - size / 2 + jit(rng);
                    off = std::max<int64_t>(
                        0, std::min(off, int64_t(norm.dims[size_t(a)]) - size));
                    w.offset[size_t(a)] = off;
                    w.size[size_t(a)] = size;
                }
                pairs.push_back({crop_window(norm, w, PadPolicy::reject),
                                 crop_window(data.samples[i].bv_mask, w,
                                             PadPolicy::reject)});
            }
        }
        TrainConfig tc;
        tc.epochs = 10;
        tc.batch_size = 2;
        tc.lr = 0.02f;
        tc.seed = 11;
        tc.loss_mix = 0.4f;  // lean on the dice term: ~1% foreground
        train_segmenter(pairs, bv_net, tc);
    }
    double bv_dice_sum = 0.0;
    {
        SegmentOptions opts;
        opts.localizer_stride = 16;
        for (size_t i = 60; i < 80; ++i) {
            Volume pred = segment_bv(data.samples[i].image, loc_net, bv_net, opts);
            bv_dice_sum += dice(data.samples[i].bv_mask, pred);
        }
    }
    double bv_mean = bv_dice_sum / 20.0;

    bool pass = body_mean >= 0.85 && bv_mean >= 0.80;
    report(7, "end-to-end phantom segmentation", pass,
           fmt("mean test DSC: body %.4f (>= 0.85), BV %.4f (>= 0.80)", body_mean, bv_mean));
}

struct ClassifierData {
    std::vector<Volume> canonical;        // 32^3 canonicalized BV masks
    std::vector<ClassLabel> labels;
    std::vector<PhantomSample> samples;   // originals, for saliency geometry
};

ClassifierData make_classifier_data() {
    ClassifierData d;
    PhantomSet set = make_phantoms(120, 0.5, 9000);
    for (PhantomSample& s : set.samples) {
        d.canonical.push_back(canonicalize(s.bv_mask, {32, 32, 32}));
        d.labels.push_back(s.label);
        d.samples.push_back(std::move(s));
    }
    return d;
}

TrainConfig classifier_config() {
    TrainConfig tc;
    tc.epochs = 8;
    tc.batch_size = 4;
    tc.lr = 0.01f;
    tc.seed = 5;
    return tc;
}

void criterion_classification_and_saliency(bool run8, bool run9) {
    ClassifierData d = make_classifier_data();
    NetworkSpec spec{NetworkKind::classifier, 4, {32, 32, 32}};
    TrainConfig tc = classifier_config();
    CrossValResult cv = cross_validate(d.canonical, d.labels, 6, tc, spec);
    if (run8) {
        report(8, "phantom mutant classification", cv.mean_accuracy >= 0.90,
               fmt("6-fold mean accuracy %.4f (>= 0.90) on 120 canonical masks",
                   cv.mean_accuracy));
    }
    if (!run9) return;

    // Saliency model: one classifier trained on the full set.
    Network model = build_classifier(spec, tc.seed);
    {
        std::vector<uint8_t> raw(d.labels.size());
        for (size_t i = 0; i < raw.size(); ++i) raw[i] = uint8_t(d.labels[i]);
        train_classifier(d.canonical, raw, model, tc);
    }

    size_t considered = 0, closer = 0, empty_maps = 0;
    for (size_t i = 0; i < d.labels.size(); ++i) {
        if (d.labels[i] != ClassLabel::mutant || cv.predictions[i] != ClassLabel::mutant) {
            continue;
        }
        const PhantomSample& s = d.samples[i];
        // The twin normal phantom shares all geometry except the mid lobe.
        PhantomConfig twin_cfg;
        twin_cfg.seed = 9000 + i;
        PhantomSample twin = generate_phantom(twin_cfg, ClassLabel::normal);

        Moments m = foreground_moments(s.bv_mask);
        PoseTransform t = canonical_rotation(m, s.bv_mask);
        t.out_dims = {32, 32, 32};
        Vec3 out_center{15.5, 15.5, 15.5};
        auto to_canonical = [&](const Vec3& p) {
            Vec3 q;
            for (int r = 0; r < 3; ++r) {
                q[size_t(r)] = out_center[size_t(r)];
                for (int c = 0; c < 3; ++c) {
                    q[size_t(r)] +=
                        t.rotation[size_t(r)][size_t(c)] * (p[size_t(c)] - t.centroid[size_t(c)]);
                }
            }
            return q;
        };

        // Centroid of the enlarged-lobe region (mutant-only BV voxels).
        Vec3 mid_sum{};
        double mid_n = 0;
        Vec3 bv_sum{};
        double bv_n = 0;
        size_t idx = 0;
        for (uint32_t z = 0; z < s.bv_mask.dims[2]; ++z) {
            for (uint32_t y = 0; y < s.bv_mask.dims[1]; ++y) {
                for (uint32_t x = 0; x < s.bv_mask.dims[0]; ++x, ++idx) {
                    if (s.bv_mask.labels[idx] && !twin.bv_mask.labels[idx]) {
                        mid_sum[0] += x;
                        mid_sum[1] += y;
                        mid_sum[2] += z;
                        ++mid_n;
                    }
                    if (s.bv_mask.labels[idx]) {
                        bv_sum[0] += x;
                        bv_sum[1] += y;
                        bv_sum[2] += z;
                        ++bv_n;
                    }
                }
            }
        }
        if (mid_n == 0) continue;
        Vec3 mid_c = to_canonical({mid_sum[0] / mid_n, mid_sum[1] / mid_n, mid_sum[2] / mid_n});
        Vec3 bv_c = to_canonical({bv_sum[0] / bv_n, bv_sum[1] / bv_n, bv_sum[2] / bv_n});

        SaliencyMap map = saliency(d.canonical[i], model);
        Vec3 sal_sum{};
        double sal_n = 0;
        idx = 0;
        for (uint32_t z = 0; z < 32; ++z) {
            for (uint32_t y = 0; y < 32; ++y) {
                for (uint32_t x = 0; x < 32; ++x, ++idx) {
                    if (map.values[idx]) {
                        sal_sum[0] += x;
                        sal_sum[1] += y;
                        sal_sum[2] += z;
                        ++sal_n;
                    }
                }
            }
        }
        if (sal_n == 0) {
            ++empty_maps;  // gradient field was nonzero but the map is empty
            continue;
        }
        Vec3 sal_c{sal_sum[0] / sal_n, sal_sum[1] / sal_n, sal_sum[2] / sal_n};
        auto dist2 = [](const Vec3& a, const Vec3& b) {
            double s2 = 0.0;
            for (int k = 0; k < 3; ++k) s2 += (a[size_t(k)] - b[size_t(k)]) * (a[size_t(k)] - b[size_t(k)]);
            return s2;
        };
        ++considered;
        if (dist2(sal_c, mid_c) < dist2(sal_c, bv_c)) ++closer;
    }
    double frac = considered ? double(closer) / double(considered) : 0.0;
    bool pass = considered > 0 && frac >= 0.70 && empty_maps == 0;
    report(9, "saliency localization", pass,
           fmt("saliency centroid nearer the modified lobe in %.0f%% of %g cases "
               "(>= 70%%), empty maps: %g (need 0)",
               100.0 * frac, double(considered), double(empty_maps)));
}

// --------------------------------------------------------------- criterion 10

std::vector<char> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoFailure("missing artifact " + path);
    return std::vector<char>(std::istreambuf_iterator<char>(is),
                             std::istreambuf_iterator<char>());
}

bool same_bytes(const std::string& a, const std::string& b) {
    return slurp(a) == slurp(b);
}

void criterion_determinism(const std::string& cli) {
    std::string detail;
    bool pass = true;

    // Library round-trips are bit-exact.
    {
        fs::path dir = fs::temp_directory_path() / "volseg_accept_rt";
        fs::create_directories(dir);
        Volume v = Volume::make_scalar({9, 7, 5});
        std::mt19937_64 rng(77);
        std::normal_distribution<float> nd(0.0f, 1.0f);
        for (float& s : v.scalars) s = nd(rng);
        std::string p1 = (dir / "a.mvf").string(), p2 = (dir / "b.mvf").string();
        write_volume(v, p1);
        write_volume(read_volume(p1), p2);
        if (!same_bytes(p1, p2)) {
            pass = false;
            detail += "MVF1 round-trip differs; ";
        }
        Network net = build_classifier({NetworkKind::classifier, 2, {8, 8, 8}}, 3);
        std::string c1 = (dir / "a.mck").string(), c2 = (dir / "b.mck").string();
        save_checkpoint(net, c1);
        save_checkpoint(load_checkpoint(c1), c2);
        if (!same_bytes(c1, c2)) {
            pass = false;
            detail += "MCK1 round-trip differs; ";
        }
    }

    // Repeated seeded CLI runs produce byte-identical artifacts.
    if (cli.empty()) {
        pass = false;
        detail += "no CLI path given; ";
    } else {
        fs::path root = fs::temp_directory_path() / "volseg_accept_cli";
        fs::remove_all(root);
        fs::create_directories(root);
        auto run = [&](const std::string& args) {
            std::string cmd = cli + " " + args + " > /dev/null 2>&1";
            return std::system(cmd.c_str()) == 0;
        };
        for (int rep = 1; rep <= 2 && pass; ++rep) {
            std::string r = (root / ("run" + std::to_string(rep))).string();
            bool ok =
                run("phantom --seed 21 --workers 1 --set n=6 --set vol_dims=32 --out " + r +
                    "/data") &&
                run("train classifier --seed 21 --workers 1 --set manifest=" + r +
                    "/data/manifest.txt --set input_dims=16 --set base_width=2"
                    " --set out_dims=16 --set epochs=1 --out " + r + "/cls") &&
                run("infer classify --seed 21 --workers 1 --set manifest=" + r +
                    "/data/manifest.txt --set classifier_ckpt=" + r +
                    "/cls/checkpoint.mck --out " + r + "/pred") &&
                run("train body-seg --seed 21 --workers 1 --set manifest=" + r +
                    "/data/manifest.txt --set input_dims=16 --set base_width=2"
                    " --set epochs=1 --out " + r + "/seg") &&
                run("infer body --seed 21 --workers 1 --set manifest=" + r +
                    "/data/manifest.txt --set fcn_ckpt=" + r +
                    "/seg/checkpoint.mck --out " + r + "/segout") &&
                run("evaluate --seed 21 --workers 1 --set manifest=" + r +
                    "/data/manifest.txt --set pred_dir=" + r +
                    "/segout --set target=body --out " + r + "/eval") &&
                run("crossval --seed 21 --workers 1 --set manifest=" + r +
                    "/data/manifest.txt --set input_dims=16 --set base_width=2"
                    " --set out_dims=16 --set epochs=1 --set k=2 --out " + r + "/cv") &&
                run("saliency --seed 21 --workers 1 --set manifest=" + r +
                    "/data/manifest.txt --set classifier_ckpt=" + r +
                    "/cls/checkpoint.mck --set out_dims=16 --out " + r + "/sal");
            if (!ok) {
                pass = false;
                detail += "CLI command failed on rep " + std::to_string(rep) + "; ";
            }
        }
        if (pass) {
            const char* artifacts[] = {
                "data/sample_0000_image.mvf", "data/manifest.txt", "cls/checkpoint.mck",
                "cls/loss_log.txt", "pred/predictions.txt", "seg/checkpoint.mck",
                "segout/sample_0000_image_body_pred.mvf", "eval/metrics.txt",
                "cv/crossval_report.txt", "sal/sample_0000_bv_saliency.mvf"};
            for (const char* a : artifacts) {
                std::string p1 = (root / "run1" / a).string();
                std::string p2 = (root / "run2" / a).string();
                try {
                    if (!same_bytes(p1, p2)) {
                        pass = false;
                        detail += std::string(a) + " differs between runs; ";
                    }
                } catch (const std::exception&) {
                    pass = false;
                    detail += std::string(a) + " missing; ";
                }
            }
        }
    }
    if (pass) detail = "repeated seeded runs byte-identical; MVF1/MCK1 round-trips exact";
    report(10, "determinism and persistence", pass, detail);
}

}  // namespace

int main(int argc, char** argv) {
    std::string cli = argc > 1 ? argv[1] : "";
    int only = argc > 2 ? std::atoi(argv[2]) : 0;
    auto want = [&](int c) { return only == 0 || only == c; };

    kernels::set_worker_count(1);
    if (want(1)) criterion_gradients();
    if (want(2)) criterion_conv_oracle();
    if (want(3)) criterion_blending();
    if (want(4)) criterion_localization();
    if (want(5)) criterion_pose();
    if (want(6)) criterion_metrics();
    if (want(7)) criterion_segmentation();
    if (want(8) || want(9)) criterion_classification_and_saliency(want(8), want(9));
    if (want(10)) criterion_determinism(cli);
    return g_failures;
}
