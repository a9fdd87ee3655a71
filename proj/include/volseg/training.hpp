#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volseg/nets.hpp"
#include "volseg/volume.hpp"

namespace volseg {

enum class WindowLabel : uint8_t { negative = 0, positive = 1 };

struct LabeledWindow {
    size_t volume_id = 0;
    Window window;
    WindowLabel label = WindowLabel::negative;
};

struct TrainConfig {
    uint32_t epochs = 5;
    uint32_t batch_size = 4;
    float lr = 0.01f;
    float momentum = 0.9f;
    uint64_t seed = 1;
    float loss_mix = 0.5f;      // CE weight; Dice weight = 1 - loss_mix
    float neg_pos_ratio = 3.0f; // negatives sampled per positive, per epoch
};

struct EpochStats {
    uint32_t epoch = 0;
    std::string split = "train";
    double loss = 0.0;
    double accuracy = 0.0;  // NaN-free; 0 where not meaningful
};

using TrainLog = std::vector<EpochStats>;

std::string format_loss_log(const TrainLog& log);

// Classifier input encoding for binary masks: +-1 instead of {0, 1}, so the
// background contributes signal too. Raw {0, 1} inputs leave most activations
// (and their gradients) at exactly zero, which stalls training.
inline float mask_input_value(uint8_t label) { return label ? 1.0f : -1.0f; }

// positive iff (GT foreground voxels inside window) / (all GT foreground) >= threshold
std::vector<LabeledWindow> label_windows(const Volume& gt_mask,
                                         const std::vector<Window>& windows,
                                         double containment_threshold = 0.95,
                                         size_t volume_id = 0);

struct PatchPair {
    Volume image;  // scalar32, normalized upstream
    Volume mask;   // label8
};

std::vector<PatchPair> extract_body_patches(const Volume& normalized,
                                            const Volume& body_mask,
                                            std::array<uint32_t, 3> window,
                                            uint32_t stride);

// Windows reference normalized volumes by volume_id.
TrainLog train_localizer(const std::vector<Volume>& normalized_volumes,
                         const std::vector<LabeledWindow>& windows, Network& net,
                         const TrainConfig& config);

TrainLog train_segmenter(const std::vector<PatchPair>& pairs, Network& net,
                         const TrainConfig& config);

TrainLog train_classifier(const std::vector<Volume>& canonical_masks,
                          const std::vector<uint8_t>& labels, Network& net,
                          const TrainConfig& config);

// Stratified fold assignment: fold sizes and per-label counts per fold each
// differ by at most 1.
std::vector<uint32_t> assign_folds(const std::vector<uint8_t>& labels, uint32_t k,
                                   uint64_t seed);

}  // namespace volseg
