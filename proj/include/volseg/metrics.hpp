#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "volseg/volume.hpp"

namespace volseg {

enum class ClassLabel : uint8_t { normal = 0, mutant = 1 };

// mutant is the positive class.
struct ConfusionMatrix {
    uint64_t tp = 0, fn = 0, fp = 0, tn = 0;
    uint64_t total() const { return tp + fn + fp + tn; }
    bool operator==(const ConfusionMatrix&) const = default;
};

struct MetricSummary {
    double accuracy = 0.0;
    std::optional<double> sensitivity;  // empty when tp+fn == 0
    std::optional<double> specificity;  // empty when tn+fp == 0
};

// 2|A∩B| / (|A|+|B|); both masks empty -> 1.0.
double dice(const Volume& a, const Volume& b);

ConfusionMatrix confusion(const std::vector<ClassLabel>& true_labels,
                          const std::vector<ClassLabel>& predicted_labels);

MetricSummary summarize(const ConfusionMatrix& m);

}  // namespace volseg
