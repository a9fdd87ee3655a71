#include <doctest.h>

#include <random>

#include "volseg/inference.hpp"
#include "volseg/training.hpp"

using namespace volseg;

namespace {

Volume noise_volume(std::array<uint32_t, 3> dims, uint64_t seed) {
    Volume v = Volume::make_scalar(dims);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d(0.0f, 1.0f);
    for (float& s : v.scalars) s = d(rng);
    return v;
}

}  // namespace

TEST_CASE("label_windows applies the containment threshold") {
    // 10 foreground voxels at x=0..9, y=z=0 in a 16^3 volume.
    Volume mask = Volume::make_label({16, 16, 16});
    for (int x = 0; x < 10; ++x) mask.labels[mask.index(size_t(x), 0, 0)] = 1;

    Window full{{0, 0, 0}, {16, 16, 16}};
    Window nine{{1, 0, 0}, {15, 15, 15}};  // covers x=1..9: 9 of 10
    auto labeled = label_windows(mask, {full, nine}, 0.95, 3);
    CHECK(labeled[0].label == WindowLabel::positive);
    CHECK(labeled[1].label == WindowLabel::negative);  // 0.9 < 0.95
    CHECK(labeled[0].volume_id == 3);

    // Lower threshold flips it.
    auto relaxed = label_windows(mask, {nine}, 0.9);
    CHECK(relaxed[0].label == WindowLabel::positive);

    // Empty ground truth: everything negative.
    Volume empty = Volume::make_label({16, 16, 16});
    auto none = label_windows(empty, {full}, 0.95);
    CHECK(none[0].label == WindowLabel::negative);
}

TEST_CASE("extract_body_patches yields one aligned pair per scan window") {
    Volume img = noise_volume({12, 12, 12}, 1);
    Volume mask = Volume::make_label({12, 12, 12});
    mask.labels[mask.index(9, 9, 9)] = 1;
    auto pairs = extract_body_patches(img, mask, {8, 8, 8}, 4);
    CHECK(pairs.size() == 8);  // offsets {0,4} per axis
    // Last window is offset (4,4,4); the mask voxel lands at local (5,5,5).
    const Volume& last = pairs.back().mask;
    CHECK(last.labels[last.index(5, 5, 5)] == 1);
}

TEST_CASE("zero-epoch training is the identity on weights") {
    NetworkSpec spec{NetworkKind::classifier, 2, {8, 8, 8}};
    Network net = build_classifier(spec, 11);
    Network before = net;
    TrainConfig cfg;
    cfg.epochs = 0;
    std::vector<Volume> masks{Volume::make_label({8, 8, 8})};
    masks[0].labels[0] = 1;
    std::vector<uint8_t> labels{1};
    TrainLog log = train_classifier(masks, labels, net, cfg);
    CHECK(log.empty());
    for (size_t p = 0; p < net.params.size(); ++p) {
        CHECK(net.params[p].tensor.data == before.params[p].tensor.data);
    }
}

TEST_CASE("training is deterministic for a fixed seed") {
    NetworkSpec spec{NetworkKind::classifier, 2, {8, 8, 8}};
    std::vector<Volume> masks;
    std::vector<uint8_t> labels;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 6; ++i) {
        Volume m = Volume::make_label({8, 8, 8});
        for (uint8_t& l : m.labels) l = rng() % 4 == 0 ? 1 : 0;
        masks.push_back(m);
        labels.push_back(uint8_t(i % 2));
    }
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 77;

    Network a = build_classifier(spec, 42);
    Network b = build_classifier(spec, 42);
    TrainLog la = train_classifier(masks, labels, a, cfg);
    TrainLog lb = train_classifier(masks, labels, b, cfg);
    REQUIRE(la.size() == lb.size());
    for (size_t i = 0; i < la.size(); ++i) CHECK(la[i].loss == lb[i].loss);
    for (size_t p = 0; p < a.params.size(); ++p) {
        CHECK(a.params[p].tensor.data == b.params[p].tensor.data);
    }
}

TEST_CASE("train_localizer requires at least one positive window") {
    NetworkSpec spec{NetworkKind::localizer, 2, {16, 16, 16}};
    Network net = build_localizer(spec, 1);
    std::vector<Volume> vols{noise_volume({16, 16, 16}, 2)};
    std::vector<LabeledWindow> windows{
        {0, Window{{0, 0, 0}, {16, 16, 16}}, WindowLabel::negative}};
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(train_localizer(vols, windows, net, cfg), NoPositives);
}

TEST_CASE("train_segmenter reduces loss on a trivially separable patch") {
    NetworkSpec spec{NetworkKind::fcn_segmenter, 2, {8, 8, 8}};
    Network net = build_fcn_segmenter(spec, 9);
    // Image equals the mask: foreground where intensity is high.
    Volume mask = Volume::make_label({8, 8, 8});
    for (size_t i = 0; i < mask.labels.size(); ++i) mask.labels[i] = i % 3 == 0;
    Volume img = Volume::make_scalar({8, 8, 8});
    for (size_t i = 0; i < img.scalars.size(); ++i) {
        img.scalars[i] = mask.labels[i] ? 2.0f : -2.0f;
    }
    std::vector<PatchPair> pairs{{img, mask}};
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.lr = 0.05f;
    TrainLog log = train_segmenter(pairs, net, cfg);
    REQUIRE(log.size() == 8);
    CHECK(log.back().loss < log.front().loss);
}

TEST_CASE("format_loss_log emits one csv line per epoch") {
    TrainLog log{{0, "train", 0.5, 0.75}, {1, "train", 0.25, 0.875}};
    CHECK(format_loss_log(log) == "0,train,0.500000,0.750000\n1,train,0.250000,0.875000\n");
}

TEST_CASE("assign_folds balances 566 items with a 103/463 split over 6 folds") {
    std::vector<uint8_t> labels(566, 0);
    for (size_t i = 0; i < 103; ++i) labels[i] = 1;
    auto folds = assign_folds(labels, 6, 123);
    std::vector<size_t> total(6, 0), mutant(6, 0);
    for (size_t i = 0; i < labels.size(); ++i) {
        ++total[folds[i]];
        mutant[folds[i]] += labels[i];
    }
    for (int f = 0; f < 6; ++f) {
        CHECK(total[f] >= 94);
        CHECK(total[f] <= 95);
        CHECK(mutant[f] >= 17);
        CHECK(mutant[f] <= 18);
    }
}

TEST_CASE("assign_folds is exactly balanced when counts divide evenly") {
    std::vector<uint8_t> labels(12);
    for (size_t i = 0; i < 12; ++i) labels[i] = i < 6 ? 1 : 0;
    auto folds = assign_folds(labels, 6, 9);
    std::vector<size_t> total(6, 0), mutant(6, 0);
    for (size_t i = 0; i < 12; ++i) {
        ++total[folds[i]];
        mutant[folds[i]] += labels[i];
    }
    for (int f = 0; f < 6; ++f) {
        CHECK(total[f] == 2);
        CHECK(mutant[f] == 1);
    }
}
