#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "volseg/metrics.hpp"
#include "volseg/volume.hpp"

namespace volseg {

struct PhantomConfig {
    std::array<uint32_t, 3> vol_dims{64, 64, 64};
    double body_fraction_target = 0.10;
    double bv_fraction_max = 0.005;
    double mutant_lobe_scale = 1.8;
    double noise_level = 0.1;  // variance of the unit-mean speckle multiplier
    uint64_t seed = 1;
};

struct PhantomSample {
    Volume image;      // scalar32
    Volume body_mask;  // label8
    Volume bv_mask;    // label8
    ClassLabel label = ClassLabel::normal;
    std::map<std::string, double> params_record;
};

// Pure function of (config, label): identical inputs give bit-identical
// samples, and mutant/normal pairs sharing a seed differ only inside the
// scaled mid-hindbrain lobe region.
PhantomSample generate_phantom(const PhantomConfig& config, ClassLabel label);

struct ManifestEntry {
    std::string image_path;      // relative to the manifest file
    std::string body_mask_path;
    std::string bv_mask_path;
    ClassLabel label;
};

std::vector<ManifestEntry> generate_dataset(size_t n, double mutant_fraction,
                                            const PhantomConfig& config,
                                            const std::string& out_dir);

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);

}  // namespace volseg
