#include "volseg/classify.hpp"

#include <cmath>
#include <cstdio>

#include "volseg/autodiff.hpp"

namespace volseg {

namespace {

Tensor<float> mask_to_tensor(const Volume& mask, const Network& net) {
    for (int a = 0; a < 3; ++a) {
        if (mask.dims[size_t(a)] != net.spec.input_dims[size_t(a)]) {
            throw ShapeMismatch("mask dims do not match classifier input");
        }
    }
    Tensor<float> t({1, 1, mask.dims[2], mask.dims[1], mask.dims[0]});
    for (size_t i = 0; i < mask.labels.size(); ++i) {
        t.data[i] = mask_input_value(mask.labels[i]);
    }
    return t;
}

}  // namespace

Prediction predict(const Volume& canonical_mask, const Network& classifier) {
    Tape<float> tape;
    int x = tape.leaf(mask_to_tensor(canonical_mask, classifier));
    int logits = classifier.forward(tape, x);
    const Tensor<float>& lv = tape.value(logits);
    double z0 = lv.data[0], z1 = lv.data[1];
    double m = std::max(z0, z1);
    double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
    Prediction p;
    p.prob_mutant = e1 / (e0 + e1);
    p.label = p.prob_mutant > 0.5 ? ClassLabel::mutant : ClassLabel::normal;
    return p;
}

CrossValResult cross_validate(const std::vector<Volume>& canonical_masks,
                              const std::vector<ClassLabel>& labels, uint32_t k,
                              const TrainConfig& config, const NetworkSpec& net_spec,
                              const FoldTrainer& trainer) {
    if (canonical_masks.size() != labels.size()) {
        throw LengthMismatch("cross_validate: mask/label count mismatch");
    }
    std::vector<uint8_t> raw_labels(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) raw_labels[i] = uint8_t(labels[i]);
    std::vector<uint32_t> folds = assign_folds(raw_labels, k, config.seed);

    // Every validation fold must contain both classes.
    for (uint32_t f = 0; f < k; ++f) {
        size_t n0 = 0, n1 = 0;
        for (size_t i = 0; i < labels.size(); ++i) {
            if (folds[i] != f) continue;
            (labels[i] == ClassLabel::mutant ? n1 : n0)++;
        }
        if (n0 == 0 || n1 == 0) {
            throw FoldTooSmall("fold " + std::to_string(f) + " lacks one class");
        }
    }

    FoldTrainer train = trainer;
    if (!train) {
        train = [&](const std::vector<size_t>& train_idx, uint32_t fold) {
            std::vector<Volume> masks;
            std::vector<uint8_t> ls;
            for (size_t i : train_idx) {
                masks.push_back(canonical_masks[i]);
                ls.push_back(raw_labels[i]);
            }
            TrainConfig fold_config = config;
            fold_config.seed = config.seed + fold;
            auto net = std::make_shared<Network>(
                build_classifier(net_spec, fold_config.seed));
            train_classifier(masks, ls, *net, fold_config);
            return [net, &canonical_masks](size_t item) {
                return predict(canonical_masks[item], *net);
            };
        };
    }

    CrossValResult result;
    result.predictions.assign(labels.size(), ClassLabel::normal);
    std::vector<bool> seen(labels.size(), false);
    for (uint32_t f = 0; f < k; ++f) {
        std::vector<size_t> train_idx, val_idx;
        for (size_t i = 0; i < labels.size(); ++i) {
            (folds[i] == f ? val_idx : train_idx).push_back(i);
        }
        auto predictor = train(train_idx, f);
        size_t correct = 0;
        for (size_t i : val_idx) {
            if (seen[i]) throw FoldTooSmall("item assigned to two validation folds");
            seen[i] = true;
            Prediction p = predictor(i);
            result.predictions[i] = p.label;
            bool t = labels[i] == ClassLabel::mutant;
            bool pr = p.label == ClassLabel::mutant;
            if (t == pr) ++correct;
            if (t && pr) ++result.pooled.tp;
            else if (t && !pr) ++result.pooled.fn;
            else if (!t && pr) ++result.pooled.fp;
            else ++result.pooled.tn;
        }
        result.fold_accuracies.push_back(double(correct) / double(val_idx.size()));
    }
    double acc_sum = 0.0;
    for (double a : result.fold_accuracies) acc_sum += a;
    result.mean_accuracy = acc_sum / double(k);
    return result;
}

SaliencyMap saliency(const Volume& canonical_mask, const Network& classifier) {
    Tape<float> tape;
    int x = tape.leaf(mask_to_tensor(canonical_mask, classifier), /*needs_grad=*/true);
    int logits = classifier.forward(tape, x);
    const Tensor<float>& lv = tape.value(logits);
    size_t predicted = lv.data[1] > lv.data[0] ? 1 : 0;
    int root = tape.pick(logits, predicted);
    tape.backward(root);
    const Tensor<float>& grad = tape.grad(x);

    float gmax = 0.0f;
    for (float g : grad.data) gmax = std::max(gmax, std::abs(g));

    SaliencyMap map;
    map.dims = canonical_mask.dims;
    map.values.assign(grad.size(), 0);
    if (gmax > 0.0f) {
        float threshold = 0.2f * gmax;
        for (size_t i = 0; i < grad.size(); ++i) {
            map.values[i] = std::abs(grad.data[i]) >= threshold ? 1 : 0;
        }
    }
    return map;
}

std::string format_crossval_report(const CrossValResult& result) {
    std::string out;
    char buf[160];
    const ConfusionMatrix& m = result.pooled;
    out += "pooled confusion matrix (rows = predicted, cols = true; mutant positive)\n";
    std::snprintf(buf, sizeof(buf), "predicted_mutant,%llu,%llu\n",
                  (unsigned long long)m.tp, (unsigned long long)m.fp);
    out += buf;
    std::snprintf(buf, sizeof(buf), "predicted_normal,%llu,%llu\n",
                  (unsigned long long)m.fn, (unsigned long long)m.tn);
    out += buf;
    MetricSummary s = summarize(m);
    std::snprintf(buf, sizeof(buf), "pooled_accuracy,%.6f\n", s.accuracy);
    out += buf;
    if (s.sensitivity) {
        std::snprintf(buf, sizeof(buf), "sensitivity,%.6f\n", *s.sensitivity);
        out += buf;
    } else {
        out += "sensitivity,undefined\n";
    }
    if (s.specificity) {
        std::snprintf(buf, sizeof(buf), "specificity,%.6f\n", *s.specificity);
        out += buf;
    } else {
        out += "specificity,undefined\n";
    }
    for (size_t f = 0; f < result.fold_accuracies.size(); ++f) {
        std::snprintf(buf, sizeof(buf), "fold_%zu_accuracy,%.6f\n", f,
                      result.fold_accuracies[f]);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "mean_fold_accuracy,%.6f\n", result.mean_accuracy);
    out += buf;
    return out;
}

}  // namespace volseg
