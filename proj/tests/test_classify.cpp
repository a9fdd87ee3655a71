#include <doctest.h>

#include <algorithm>
#include <memory>
#include <random>
#include <set>

#include "volseg/classify.hpp"

using namespace volseg;

namespace {

// 103 mutants followed by 463 normals, the class balance used throughout.
std::vector<ClassLabel> reference_labels() {
    std::vector<ClassLabel> labels(566, ClassLabel::normal);
    for (size_t i = 0; i < 103; ++i) labels[i] = ClassLabel::mutant;
    return labels;
}

std::vector<Volume> dummy_masks(size_t n) {
    std::vector<Volume> masks;
    Volume m = Volume::make_label({1, 1, 1});
    m.labels[0] = 1;
    masks.assign(n, m);
    return masks;
}

FoldTrainer fixed_predictor(std::vector<ClassLabel> predictions) {
    return [predictions](const std::vector<size_t>&, uint32_t) {
        return [predictions](size_t item) {
            Prediction p;
            p.label = predictions[item];
            p.prob_mutant = predictions[item] == ClassLabel::mutant ? 0.9 : 0.1;
            return p;
        };
    };
}

}  // namespace

TEST_CASE("confusion and summary reproduce the 566-embryo reference numbers") {
    std::vector<ClassLabel> truth = reference_labels();
    std::vector<ClassLabel> pred = truth;
    // 11 mutants missed, 12 normals flagged.
    for (size_t i = 0; i < 11; ++i) pred[i] = ClassLabel::normal;
    for (size_t i = 103; i < 115; ++i) pred[i] = ClassLabel::mutant;

    ConfusionMatrix m = confusion(truth, pred);
    CHECK(m.tp == 92);
    CHECK(m.fn == 11);
    CHECK(m.fp == 12);
    CHECK(m.tn == 451);
    MetricSummary s = summarize(m);
    CHECK(s.accuracy == doctest::Approx(543.0 / 566.0));        // 0.9594
    CHECK(*s.sensitivity == doctest::Approx(92.0 / 103.0));     // 0.8932
    CHECK(*s.specificity == doctest::Approx(451.0 / 463.0));    // 0.9741
}

TEST_CASE("summarize leaves one-class rates undefined") {
    MetricSummary s = summarize(ConfusionMatrix{0, 0, 2, 8});
    CHECK_FALSE(s.sensitivity.has_value());
    CHECK(s.specificity.has_value());
}

TEST_CASE("cross_validate pools stubbed predictions into the expected matrix") {
    std::vector<ClassLabel> truth = reference_labels();
    std::vector<ClassLabel> pred = truth;
    for (size_t i = 0; i < 11; ++i) pred[i] = ClassLabel::normal;
    for (size_t i = 103; i < 115; ++i) pred[i] = ClassLabel::mutant;

    TrainConfig cfg;
    NetworkSpec spec;
    CrossValResult r = cross_validate(dummy_masks(566), truth, 6, cfg, spec,
                                      fixed_predictor(pred));
    CHECK(r.pooled == ConfusionMatrix{92, 11, 12, 451});
    CHECK(r.fold_accuracies.size() == 6);
    CHECK(r.predictions == pred);

    std::string report = format_crossval_report(r);
    CHECK(report.find("pooled_accuracy,0.959364") != std::string::npos);
    CHECK(report.find("sensitivity,0.893204") != std::string::npos);
    CHECK(report.find("specificity,0.974082") != std::string::npos);
    CHECK(report.find("mean_fold_accuracy,") != std::string::npos);
}

TEST_CASE("always-normal stub scores the base rate") {
    std::vector<ClassLabel> truth = reference_labels();
    std::vector<ClassLabel> pred(566, ClassLabel::normal);
    TrainConfig cfg;
    NetworkSpec spec;
    CrossValResult r = cross_validate(dummy_masks(566), truth, 6, cfg, spec,
                                      fixed_predictor(pred));
    MetricSummary s = summarize(r.pooled);
    CHECK(s.accuracy == doctest::Approx(463.0 / 566.0));
    CHECK(*s.sensitivity == doctest::Approx(0.0));
    CHECK(*s.specificity == doctest::Approx(1.0));
}

TEST_CASE("validation items never appear in their fold's training set") {
    std::vector<ClassLabel> truth = reference_labels();
    auto tracking_trainer = [&](const std::vector<size_t>& train_idx, uint32_t) {
        auto train_set = std::make_shared<std::set<size_t>>(train_idx.begin(),
                                                            train_idx.end());
        return [train_set](size_t item) {
            CHECK(train_set->count(item) == 0);  // no leakage
            Prediction p;
            p.label = ClassLabel::normal;
            return p;
        };
    };
    TrainConfig cfg;
    NetworkSpec spec;
    CrossValResult r = cross_validate(dummy_masks(566), truth, 6, cfg, spec,
                                      tracking_trainer);
    CHECK(r.pooled.total() == 566);  // every item validated exactly once
}

TEST_CASE("cross_validate rejects folds missing a class") {
    std::vector<ClassLabel> truth(6, ClassLabel::normal);
    TrainConfig cfg;
    NetworkSpec spec;
    CHECK_THROWS_AS(cross_validate(dummy_masks(6), truth, 3, cfg, spec,
                                   fixed_predictor(truth)),
                    FoldTooSmall);
}

TEST_CASE("saliency matches a direct gradient recomputation") {
    NetworkSpec spec{NetworkKind::classifier, 2, {8, 8, 8}};
    Network net = build_classifier(spec, 13);
    Volume mask = Volume::make_label({8, 8, 8});
    std::mt19937_64 rng(3);
    for (uint8_t& l : mask.labels) l = rng() % 3 == 0 ? 1 : 0;

    SaliencyMap map = saliency(mask, net);
    CHECK(map.dims == mask.dims);

    // Independent recomputation of the input gradient.
    Tape<float> tape;
    Tensor<float> x({1, 1, 8, 8, 8});
    for (size_t i = 0; i < mask.labels.size(); ++i) {
        x.data[i] = mask_input_value(mask.labels[i]);
    }
    int xi = tape.leaf(x, true);
    int logits = net.forward(tape, xi);
    const Tensor<float>& lv = tape.value(logits);
    size_t pred = lv.data[1] > lv.data[0] ? 1 : 0;
    tape.backward(tape.pick(logits, pred));
    const Tensor<float>& g = tape.grad(xi);
    float gmax = 0.0f;
    for (float v : g.data) gmax = std::max(gmax, std::abs(v));
    REQUIRE(gmax > 0.0f);
    size_t ones = 0;
    for (size_t i = 0; i < g.size(); ++i) {
        uint8_t expect = std::abs(g.data[i]) >= 0.2f * gmax ? 1 : 0;
        CHECK(map.values[i] == expect);
        ones += expect;
    }
    CHECK(ones > 0);
    CHECK(ones < g.size());
}

TEST_CASE("saliency is invariant to uniform scaling of the output layer") {
    NetworkSpec spec{NetworkKind::classifier, 2, {8, 8, 8}};
    Network net = build_classifier(spec, 21);
    Volume mask = Volume::make_label({8, 8, 8});
    std::mt19937_64 rng(4);
    for (uint8_t& l : mask.labels) l = rng() % 3 == 0 ? 1 : 0;
    SaliencyMap a = saliency(mask, net);

    // Scaling the final linear layer scales every logit gradient equally, so
    // the relative 20% threshold selects the same voxels.
    for (float& v : net.params.back().tensor.data) v *= 2.0f;       // fc2 bias
    for (float& v : net.params[net.params.size() - 2].tensor.data) v *= 2.0f;  // fc2 weight
    SaliencyMap b = saliency(mask, net);
    CHECK(a.values == b.values);
}

TEST_CASE("saliency of a zero network is empty") {
    NetworkSpec spec{NetworkKind::classifier, 2, {8, 8, 8}};
    Network net = build_classifier(spec, 1);
    for (Parameter& p : net.params) {
        std::fill(p.tensor.data.begin(), p.tensor.data.end(), 0.0f);
    }
    Volume mask = Volume::make_label({8, 8, 8});
    mask.labels[0] = 1;
    SaliencyMap map = saliency(mask, net);
    for (uint8_t v : map.values) CHECK(v == 0);
}

TEST_CASE("predict uses a strict 0.5 decision rule") {
    NetworkSpec spec{NetworkKind::classifier, 2, {8, 8, 8}};
    Network net = build_classifier(spec, 31);
    for (Parameter& p : net.params) {
        std::fill(p.tensor.data.begin(), p.tensor.data.end(), 0.0f);
    }
    Volume mask = Volume::make_label({8, 8, 8});
    mask.labels[0] = 1;
    Prediction p = predict(mask, net);
    CHECK(p.prob_mutant == doctest::Approx(0.5));
    CHECK(p.label == ClassLabel::normal);  // exactly 0.5 is not mutant
}
