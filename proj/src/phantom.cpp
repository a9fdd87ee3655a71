#include "volseg/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

namespace volseg {

namespace {

struct Rot {
    double m[3][3];
    std::array<double, 3> apply(const std::array<double, 3>& v) const {
        return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
                m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
                m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
    }
    std::array<double, 3> apply_inv(const std::array<double, 3>& v) const {
        return {m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
                m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
                m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2]};
    }
};

Rot random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    double q[4];
    double norm = 0.0;
    do {
        for (double& v : q) v = n(rng);
        norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    } while (norm < 1e-6);
    for (double& v : q) v /= norm;
    double w = q[0], x = q[1], y = q[2], z = q[3];
    Rot r;
    r.m[0][0] = 1 - 2 * (y * y + z * z);
    r.m[0][1] = 2 * (x * y - w * z);
    r.m[0][2] = 2 * (x * z + w * y);
    r.m[1][0] = 2 * (x * y + w * z);
    r.m[1][1] = 1 - 2 * (x * x + z * z);
    r.m[1][2] = 2 * (y * z - w * x);
    r.m[2][0] = 2 * (x * z - w * y);
    r.m[2][1] = 2 * (y * z + w * x);
    r.m[2][2] = 1 - 2 * (x * x + y * y);
    return r;
}

struct Geometry {
    std::array<double, 3> body_center;
    std::array<double, 3> semi_axes;  // a, b, c in body frame
    Rot rot;
    // lobe world-space centers; ellipsoids axis-aligned with the body frame
    std::array<std::array<double, 3>, 3> lobe_centers;  // [0],[1] lateral, [2] mid
    std::array<std::array<double, 3>, 3> lobe_axes;     // per-lobe semi-axes
    int attempts = 0;
};

bool in_body(const Geometry& g, double x, double y, double z) {
    std::array<double, 3> d{x - g.body_center[0], y - g.body_center[1],
                            z - g.body_center[2]};
    auto b = g.rot.apply_inv(d);
    double s = 0.0;
    for (int a = 0; a < 3; ++a) {
        double t = b[size_t(a)] / g.semi_axes[size_t(a)];
        s += t * t;
    }
    return s <= 1.0;
}

int region_of(const Geometry& g, double mid_scale, double x, double y, double z) {
    // 0 background, 1 body, 2 bv
    if (!in_body(g, x, y, z)) return 0;
    for (int li = 0; li < 3; ++li) {
        double s = li == 2 ? mid_scale : 1.0;
        std::array<double, 3> d{x - g.lobe_centers[size_t(li)][0],
                                y - g.lobe_centers[size_t(li)][1],
                                z - g.lobe_centers[size_t(li)][2]};
        auto q = g.rot.apply_inv(d);
        double en = 0.0;
        for (int a = 0; a < 3; ++a) {
            double t = q[size_t(a)] / (g.lobe_axes[size_t(li)][size_t(a)] * s);
            en += t * t;
        }
        if (en <= 1.0) return 2;
    }
    return 1;
}

}  // namespace

PhantomSample generate_phantom(const PhantomConfig& config, ClassLabel label) {
    if (config.body_fraction_target <= 0 || config.body_fraction_target >= 1 ||
        config.bv_fraction_max <= 0 || config.bv_fraction_max >= 1 ||
        config.mutant_lobe_scale <= 1.0) {
        throw GeometryFailure("invalid phantom configuration");
    }
    const auto dims = config.vol_dims;
    const double n_vox = double(dims[0]) * dims[1] * dims[2];
    const double scale = double(dims[0]) / 64.0;  // lobe sizes follow grid scale

    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    Geometry g;
    bool accepted = false;
    Volume body_mask = Volume::make_label(dims);
    for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
        g.attempts = attempt + 1;
        g.rot = random_rotation(rng);
        for (int a = 0; a < 3; ++a) {
            g.body_center[size_t(a)] =
                (dims[size_t(a)] - 1) / 2.0 + (u01(rng) - 0.5) * 0.1 * dims[size_t(a)];
        }
        double target = config.body_fraction_target * n_vox * (0.85 + 0.3 * u01(rng));
        double abc = target * 3.0 / (4.0 * M_PI);
        double s1 = 0.8 + 0.45 * u01(rng);
        double s2 = 0.8 + 0.45 * u01(rng);
        double t = std::cbrt(abc);
        g.semi_axes = {t * s1, t * s2, t / (s1 * s2)};

        // Laterals are thin oblate plates sharing a per-embryo size factor
        // that varies widely, so total BV volume overlaps heavily between
        // the classes and the voxel count alone cannot separate them. The
        // mid lobe is a small ball: at normal size neither it nor the thin
        // laterals contain a fully solid neighborhood, while the
        // mutant-scaled ball grows a solid core, so the class signal is
        // strictly local to the mid lobe.
        double lat_size = u01(rng);  // shared per-embryo lateral size factor
        double mid_a = (1.5 + 0.15 * u01(rng)) * scale;
        for (int li = 0; li < 2; ++li) {
            double r = (3.0 + 3.5 * lat_size + 0.1 * (u01(rng) - 0.5)) * scale;
            g.lobe_axes[size_t(li)] = {r, r, 1.0 * scale};
        }
        g.lobe_axes[2] = {mid_a, mid_a, mid_a};
        // Lobe positions in body-frame fractions of the semi-axes; the mid
        // lobe sits high on the c axis, laterals flank it.
        std::array<std::array<double, 3>, 3> frac{{{-0.25, 0.0, 0.1},
                                                   {0.25, 0.0, 0.1},
                                                   {0.0, 0.0, 0.5}}};
        bool contained = true;
        for (int li = 0; li < 3; ++li) {
            std::array<double, 3> bp{frac[size_t(li)][0] * g.semi_axes[0],
                                     frac[size_t(li)][1] * g.semi_axes[1],
                                     frac[size_t(li)][2] * g.semi_axes[2]};
            auto wp = g.rot.apply(bp);
            for (int a = 0; a < 3; ++a) {
                g.lobe_centers[size_t(li)][size_t(a)] = g.body_center[size_t(a)] + wp[size_t(a)];
            }
            // conservative containment of the worst-case (mutant-scaled) lobe:
            // the lobe's axis-aligned bounding corner must stay well inside
            double s = li == 2 ? config.mutant_lobe_scale : 1.0;
            double en = 0.0;
            for (int a = 0; a < 3; ++a) {
                double q = (std::abs(bp[size_t(a)]) + g.lobe_axes[size_t(li)][size_t(a)] * s) /
                           g.semi_axes[size_t(a)];
                en += q * q;
            }
            if (en > 0.95 * 0.95) contained = false;
        }
        if (!contained) continue;

        // Rasterize the body; check the fraction bound.
        uint64_t body_count = 0;
        size_t idx = 0;
        for (uint32_t z = 0; z < dims[2]; ++z) {
            for (uint32_t y = 0; y < dims[1]; ++y) {
                for (uint32_t x = 0; x < dims[0]; ++x, ++idx) {
                    uint8_t v = in_body(g, x, y, z) ? 1 : 0;
                    body_mask.labels[idx] = v;
                    body_count += v;
                }
            }
        }
        double body_frac = double(body_count) / n_vox;
        if (body_frac < 0.7 * config.body_fraction_target ||
            body_frac > 1.3 * config.body_fraction_target) {
            continue;
        }

        // Worst-case BV fraction (mutant scaling) must stay under the cap.
        uint64_t bv_worst = 0;
        idx = 0;
        for (uint32_t z = 0; z < dims[2]; ++z) {
            for (uint32_t y = 0; y < dims[1]; ++y) {
                for (uint32_t x = 0; x < dims[0]; ++x, ++idx) {
                    if (region_of(g, config.mutant_lobe_scale, x, y, z) == 2) ++bv_worst;
                }
            }
        }
        if (bv_worst == 0 || double(bv_worst) / n_vox > config.bv_fraction_max) continue;
        accepted = true;
    }
    if (!accepted) throw GeometryFailure("rejection sampling exceeded 100 attempts");

    double mid_scale = label == ClassLabel::mutant ? config.mutant_lobe_scale : 1.0;

    PhantomSample sample;
    sample.label = label;
    sample.body_mask = body_mask;
    sample.bv_mask = Volume::make_label(dims);
    sample.image = Volume::make_scalar(dims);

    // Speckle multiplier: mean of m squared standard normals (unit mean,
    // variance 2/m ~ noise_level). Drawn per voxel in fixed order so the
    // field is identical for mutant and normal twins.
    std::mt19937_64 noise_rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> nd(0.0, 1.0);
    const int m = config.noise_level > 0
                      ? std::max(1, int(std::llround(2.0 / config.noise_level)))
                      : 0;

    size_t idx = 0;
    for (uint32_t z = 0; z < dims[2]; ++z) {
        for (uint32_t y = 0; y < dims[1]; ++y) {
            for (uint32_t x = 0; x < dims[0]; ++x, ++idx) {
                int region = region_of(g, mid_scale, x, y, z);
                sample.bv_mask.labels[idx] = region == 2 ? 1 : 0;
                double base = region == 0 ? 0.5 : (region == 1 ? 0.75 : 0.25);
                double speckle = 1.0;
                if (m > 0) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i) {
                        double gs = nd(noise_rng);
                        acc += gs * gs;
                    }
                    speckle = acc / m;
                }
                sample.image.scalars[idx] = float(base * speckle);
            }
        }
    }

    sample.params_record["attempts"] = g.attempts;
    for (int a = 0; a < 3; ++a) {
        sample.params_record["body_center_" + std::to_string(a)] = g.body_center[size_t(a)];
        sample.params_record["semi_axis_" + std::to_string(a)] = g.semi_axes[size_t(a)];
        sample.params_record["mid_lobe_center_" + std::to_string(a)] =
            g.lobe_centers[2][size_t(a)];
    }
    sample.params_record["lateral_length_0"] = g.lobe_axes[0][0];
    sample.params_record["lateral_length_1"] = g.lobe_axes[1][0];
    sample.params_record["lateral_thickness"] = g.lobe_axes[0][1];
    sample.params_record["mid_lobe_radius"] = g.lobe_axes[2][0];
    sample.params_record["mid_lobe_scale"] = mid_scale;
    return sample;
}

std::vector<ManifestEntry> generate_dataset(size_t n, double mutant_fraction,
                                            const PhantomConfig& config,
                                            const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    size_t mutant_quota = size_t(std::llround(double(n) * mutant_fraction));

    std::vector<ManifestEntry> entries;
    size_t mutants_so_far = 0;
    for (size_t i = 0; i < n; ++i) {
        // Interleaved label assignment hitting the quota exactly.
        size_t want = (i + 1) * mutant_quota / n;
        ClassLabel label = mutants_so_far < want ? ClassLabel::mutant : ClassLabel::normal;
        if (label == ClassLabel::mutant) ++mutants_so_far;

        PhantomConfig item_config = config;
        item_config.seed = config.seed + i;
        PhantomSample sample = generate_phantom(item_config, label);

        char stem[32];
        std::snprintf(stem, sizeof(stem), "sample_%04zu", i);
        ManifestEntry e;
        e.image_path = std::string(stem) + "_image.mvf";
        e.body_mask_path = std::string(stem) + "_body.mvf";
        e.bv_mask_path = std::string(stem) + "_bv.mvf";
        e.label = label;
        write_volume(sample.image, out_dir + "/" + e.image_path);
        write_volume(sample.body_mask, out_dir + "/" + e.body_mask_path);
        write_volume(sample.bv_mask, out_dir + "/" + e.bv_mask_path);
        entries.push_back(e);
    }
    write_manifest(entries, out_dir + "/manifest.txt");
    return entries;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoFailure("cannot write manifest " + path);
    for (const ManifestEntry& e : entries) {
        os << e.image_path << ',' << e.body_mask_path << ',' << e.bv_mask_path << ','
           << (e.label == ClassLabel::mutant ? "mutant" : "normal") << '\n';
    }
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoFailure("cannot read manifest " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ManifestEntry e;
        size_t p1 = line.find(',');
        size_t p2 = line.find(',', p1 + 1);
        size_t p3 = line.find(',', p2 + 1);
        if (p1 == std::string::npos || p2 == std::string::npos || p3 == std::string::npos) {
            throw IoFailure("malformed manifest line: " + line);
        }
        e.image_path = line.substr(0, p1);
        e.body_mask_path = line.substr(p1 + 1, p2 - p1 - 1);
        e.bv_mask_path = line.substr(p2 + 1, p3 - p2 - 1);
        std::string label = line.substr(p3 + 1);
        if (label == "mutant") e.label = ClassLabel::mutant;
        else if (label == "normal") e.label = ClassLabel::normal;
        else throw IoFailure("unknown label in manifest: " + label);
        entries.push_back(e);
    }
    return entries;
}

}  // namespace volseg
