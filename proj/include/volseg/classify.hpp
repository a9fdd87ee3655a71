#pragma once

#include <functional>
#include <vector>

#include "volseg/metrics.hpp"
#include "volseg/nets.hpp"
#include "volseg/training.hpp"
#include "volseg/volume.hpp"

namespace volseg {

struct Prediction {
    ClassLabel label = ClassLabel::normal;  // mutant iff prob_mutant > 0.5 (strict)
    double prob_mutant = 0.0;
};

struct SaliencyMap {
    std::array<uint32_t, 3> dims{};
    std::vector<uint8_t> values;  // 1 iff |g| >= 0.2 * max|g|
};

Prediction predict(const Volume& canonical_mask, const Network& classifier);

struct CrossValResult {
    ConfusionMatrix pooled;
    std::vector<double> fold_accuracies;
    double mean_accuracy = 0.0;
    std::vector<ClassLabel> predictions;  // aligned with the input items
};

// Trains on k-1 folds, predicts the held-out fold. The trainer hook exists so
// tests can stub out real training; the default trains a fresh classifier with
// seed = config.seed + fold_index.
using FoldTrainer = std::function<std::function<Prediction(size_t)>(
    const std::vector<size_t>& train_indices, uint32_t fold)>;

CrossValResult cross_validate(const std::vector<Volume>& canonical_masks,
                              const std::vector<ClassLabel>& labels, uint32_t k,
                              const TrainConfig& config, const NetworkSpec& net_spec,
                              const FoldTrainer& trainer = nullptr);

// d(predicted-class logit)/d(input), absolute value, thresholded at 20% of
// the maximum (inclusive); empty when the gradient field is all zero.
SaliencyMap saliency(const Volume& canonical_mask, const Network& classifier);

std::string format_crossval_report(const CrossValResult& result);

}  // namespace volseg
