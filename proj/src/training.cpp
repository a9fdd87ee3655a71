#include "volseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "volseg/autodiff.hpp"
#include "volseg/inference.hpp"

namespace volseg {

namespace {

void fill_batch_slice(Tensor<float>& batch, size_t item, const Volume& patch) {
    size_t S = size_t(patch.dims[0]) * patch.dims[1] * patch.dims[2];
    float* dst = &batch.data[item * S];
    if (patch.dtype == Dtype::scalar32) {
        std::copy(patch.scalars.begin(), patch.scalars.end(), dst);
    } else {
        for (size_t i = 0; i < S; ++i) dst[i] = float(patch.labels[i]);
    }
}

struct Optimizer {
    Network& net;
    const TrainConfig& config;

    // One forward/backward/step over a prepared tape closure.
    template <typename BuildFn>
    double step(BuildFn build) {
        Tape<float> tape;
        std::vector<int> param_ids = net.make_param_leaves(tape, /*needs_grad=*/true);
        int root = build(tape, param_ids);
        tape.backward(root);
        for (size_t p = 0; p < net.params.size(); ++p) {
            sgd_step(net.params[p].tensor, net.params[p].velocity, tape.grad(param_ids[p]),
                     config.lr, config.momentum);
        }
        return double(tape.value(root).data[0]);
    }
};

}  // namespace

std::string format_loss_log(const TrainLog& log) {
    std::string out;
    char line[128];
    for (const EpochStats& e : log) {
        std::snprintf(line, sizeof(line), "%u,%s,%.6f,%.6f\n", e.epoch, e.split.c_str(),
                      e.loss, e.accuracy);
        out += line;
    }
    return out;
}

std::vector<LabeledWindow> label_windows(const Volume& gt_mask,
                                         const std::vector<Window>& windows,
                                         double containment_threshold, size_t volume_id) {
    if (gt_mask.dtype != Dtype::label8) throw InvalidMask("label_windows: need label8 mask");
    uint64_t total = 0;
    for (uint8_t v : gt_mask.labels) total += v;

    std::vector<LabeledWindow> out;
    out.reserve(windows.size());
    for (const Window& w : windows) {
        uint64_t inside = 0;
        if (total > 0) {
            int64_t x0 = std::max<int64_t>(0, w.offset[0]);
            int64_t y0 = std::max<int64_t>(0, w.offset[1]);
            int64_t z0 = std::max<int64_t>(0, w.offset[2]);
            int64_t x1 = std::min<int64_t>(gt_mask.dims[0], w.offset[0] + w.size[0]);
            int64_t y1 = std::min<int64_t>(gt_mask.dims[1], w.offset[1] + w.size[1]);
            int64_t z1 = std::min<int64_t>(gt_mask.dims[2], w.offset[2] + w.size[2]);
            for (int64_t z = z0; z < z1; ++z) {
                for (int64_t y = y0; y < y1; ++y) {
                    for (int64_t x = x0; x < x1; ++x) {
                        inside += gt_mask.labels[gt_mask.index(size_t(x), size_t(y),
                                                               size_t(z))];
                    }
                }
            }
        }
        bool positive =
            total > 0 && double(inside) / double(total) >= containment_threshold;
        out.push_back({volume_id, w,
                       positive ? WindowLabel::positive : WindowLabel::negative});
    }
    return out;
}

std::vector<PatchPair> extract_body_patches(const Volume& normalized,
                                            const Volume& body_mask,
                                            std::array<uint32_t, 3> window,
                                            uint32_t stride) {
    std::vector<PatchPair> pairs;
    for (const Window& w : scan_windows(normalized.dims, window, stride)) {
        pairs.push_back({crop_window(normalized, w, PadPolicy::reject),
                         crop_window(body_mask, w, PadPolicy::reject)});
    }
    return pairs;
}

TrainLog train_localizer(const std::vector<Volume>& normalized_volumes,
                         const std::vector<LabeledWindow>& windows, Network& net,
                         const TrainConfig& config) {
    std::vector<size_t> positives, negatives;
    for (size_t i = 0; i < windows.size(); ++i) {
        (windows[i].label == WindowLabel::positive ? positives : negatives).push_back(i);
    }
    if (positives.empty()) throw NoPositives("no positive windows in dataset");

    const auto in_dims = net.spec.input_dims;
    const size_t S = size_t(in_dims[0]) * in_dims[1] * in_dims[2];
    std::mt19937_64 rng(config.seed);
    Optimizer opt{net, config};
    TrainLog log;

    for (uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<size_t> order = positives;
        std::vector<size_t> negs = negatives;
        std::shuffle(negs.begin(), negs.end(), rng);
        size_t n_neg = std::min(negs.size(),
                                size_t(std::llround(config.neg_pos_ratio *
                                                    double(positives.size()))));
        order.insert(order.end(), negs.begin(), negs.begin() + std::ptrdiff_t(n_neg));
        std::shuffle(order.begin(), order.end(), rng);

        // Inverse-frequency class weights over the epoch sample.
        double n_pos = double(positives.size());
        double tot = n_pos + double(n_neg);
        std::array<float, 2> weights{float(tot / (2.0 * double(n_neg ? n_neg : 1))),
                                     float(tot / (2.0 * n_pos))};

        double loss_sum = 0.0;
        size_t batches = 0, correct = 0;
        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            size_t bs = std::min(size_t(config.batch_size), order.size() - start);
            Tensor<float> batch({bs, 1, in_dims[2], in_dims[1], in_dims[0]});
            std::vector<int> labels(bs);
            for (size_t b = 0; b < bs; ++b) {
                const LabeledWindow& lw = windows[order[start + b]];
                fill_batch_slice(batch, b,
                                 crop_window(normalized_volumes[lw.volume_id], lw.window,
                                             PadPolicy::zero_pad));
                labels[b] = lw.label == WindowLabel::positive ? 1 : 0;
            }
            (void)S;
            double loss = opt.step([&](Tape<float>& tape, const std::vector<int>& ids) {
                int x = tape.leaf(batch);
                int logits = net.forward(tape, x, ids);
                const Tensor<float>& lv = tape.value(logits);
                for (size_t b = 0; b < bs; ++b) {
                    int pred = lv.data[2 * b + 1] > lv.data[2 * b] ? 1 : 0;
                    if (pred == labels[b]) ++correct;
                }
                return tape.softmax_cross_entropy(logits, labels, weights);
            });
            loss_sum += loss;
            ++batches;
        }
        log.push_back({epoch, "train", loss_sum / double(batches ? batches : 1),
                       double(correct) / double(order.size())});
    }
    return log;
}

TrainLog train_segmenter(const std::vector<PatchPair>& pairs, Network& net,
                         const TrainConfig& config) {
    const auto in_dims = net.spec.input_dims;
    const size_t S = size_t(in_dims[0]) * in_dims[1] * in_dims[2];
    std::mt19937_64 rng(config.seed);
    Optimizer opt{net, config};
    TrainLog log;

    for (uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<size_t> order(pairs.size());
        std::iota(order.begin(), order.end(), size_t(0));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0, dice_sum = 0.0;
        size_t batches = 0;
        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            size_t bs = std::min(size_t(config.batch_size), order.size() - start);
            Tensor<float> batch({bs, 1, in_dims[2], in_dims[1], in_dims[0]});
            Tensor<float> gt({bs, 1, in_dims[2], in_dims[1], in_dims[0]});
            for (size_t b = 0; b < bs; ++b) {
                const PatchPair& p = pairs[order[start + b]];
                fill_batch_slice(batch, b, p.image);
                fill_batch_slice(gt, b, p.mask);
            }
            double loss = opt.step([&](Tape<float>& tape, const std::vector<int>& ids) {
                int x = tape.leaf(batch);
                int logits = net.forward(tape, x, ids);
                int ce = tape.voxel_softmax_cross_entropy(logits, gt, {1.0f, 1.0f});
                int prob = tape.fg_prob(logits);
                int dl = tape.soft_dice_loss(prob, gt);

                // hard-Dice bookkeeping on the forward values
                const Tensor<float>& pv = tape.value(prob);
                uint64_t inter = 0, np = 0, ng = 0;
                for (size_t i = 0; i < bs * S; ++i) {
                    bool fp = pv.data[i] > 0.5f;
                    bool fg = gt.data[i] > 0.5f;
                    np += fp;
                    ng += fg;
                    inter += fp && fg;
                }
                dice_sum += (np + ng) ? 2.0 * double(inter) / double(np + ng) : 1.0;

                return tape.axpby(ce, dl, config.loss_mix, 1.0f - config.loss_mix);
            });
            loss_sum += loss;
            ++batches;
        }
        log.push_back({epoch, "train", loss_sum / double(batches ? batches : 1),
                       batches ? dice_sum / double(batches) : 0.0});
    }
    return log;
}

TrainLog train_classifier(const std::vector<Volume>& canonical_masks,
                          const std::vector<uint8_t>& labels, Network& net,
                          const TrainConfig& config) {
    if (canonical_masks.size() != labels.size()) {
        throw LengthMismatch("train_classifier: mask/label count mismatch");
    }
    const auto in_dims = net.spec.input_dims;
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    Optimizer opt{net, config};
    TrainLog log;

    // Class weights inversely proportional to class frequency.
    double n1 = 0;
    for (uint8_t l : labels) n1 += l;
    double n0 = double(labels.size()) - n1;
    std::array<float, 2> weights{float(labels.size() / (2.0 * std::max(n0, 1.0))),
                                 float(labels.size() / (2.0 * std::max(n1, 1.0)))};

    for (uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<size_t> order(labels.size());
        std::iota(order.begin(), order.end(), size_t(0));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        size_t batches = 0, correct = 0;
        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            size_t bs = std::min(size_t(config.batch_size), order.size() - start);
            Tensor<float> batch({bs, 1, in_dims[2], in_dims[1], in_dims[0]});
            std::vector<int> batch_labels(bs);
            for (size_t b = 0; b < bs; ++b) {
                const Volume& m = canonical_masks[order[start + b]];
                size_t base = b * m.labels.size();
                // Random axis flips: the canonical pose has a sign ambiguity
                // per principal axis, so flipped masks are equally valid
                // poses; this stops the net from memorizing per-sample
                // lobe shapes in fixed orientations.
                bool fx = coin(rng) < 0.5, fy = coin(rng) < 0.5, fz = coin(rng) < 0.5;
                size_t idx = 0;
                for (size_t z = 0; z < in_dims[2]; ++z) {
                    size_t sz = fz ? in_dims[2] - 1 - z : z;
                    for (size_t y = 0; y < in_dims[1]; ++y) {
                        size_t sy = fy ? in_dims[1] - 1 - y : y;
                        size_t srow = (sz * in_dims[1] + sy) * in_dims[0];
                        for (size_t x2 = 0; x2 < in_dims[0]; ++x2, ++idx) {
                            size_t sx = fx ? in_dims[0] - 1 - x2 : x2;
                            batch.data[base + idx] = mask_input_value(m.labels[srow + sx]);
                        }
                    }
                }
                // Random erasing: blank a box so no single distant region is
                // a reliable cue on its own and global voxel counts stay
                // unreliable; the stable local class pattern survives most
                // erasures.
                if (coin(rng) < 0.0) {
                    std::array<size_t, 3> side, lo;
                    for (int a = 0; a < 3; ++a) {
                        size_t dim = in_dims[size_t(a)];
                        side[size_t(a)] = 6 + rng() % 5;
                        side[size_t(a)] = std::min(side[size_t(a)], dim);
                        lo[size_t(a)] = rng() % (dim - side[size_t(a)] + 1);
                    }
                    for (size_t z = lo[2]; z < lo[2] + side[2]; ++z) {
                        for (size_t y = lo[1]; y < lo[1] + side[1]; ++y) {
                            size_t row = base + (z * in_dims[1] + y) * in_dims[0];
                            for (size_t x2 = lo[0]; x2 < lo[0] + side[0]; ++x2) {
                                batch.data[row + x2] = mask_input_value(0);
                            }
                        }
                    }
                }
                batch_labels[b] = labels[order[start + b]];
            }
            double loss = opt.step([&](Tape<float>& tape, const std::vector<int>& ids) {
                int x = tape.leaf(batch);
                int logits = net.forward(tape, x, ids);
                const Tensor<float>& lv = tape.value(logits);
                for (size_t b = 0; b < bs; ++b) {
                    int pred = lv.data[2 * b + 1] > lv.data[2 * b] ? 1 : 0;
                    if (pred == batch_labels[b]) ++correct;
                }
                return tape.softmax_cross_entropy(logits, batch_labels, weights);
            });
            // Decoupled weight decay on the head linears (biases exempt).
            // Once the classes are separable the cross-entropy gradient
            // vanishes, so without decay the head weights on channels that
            // never contributed keep their random init values and pollute
            // the input gradient used for saliency.
            const float decay = 1.0f - config.lr * 2.0f;
            for (Parameter& p : net.params) {
                if (p.name.compare(0, 2, "fc") != 0 ||
                    p.name.compare(p.name.size() - 5, 5, ".bias") == 0) {
                    continue;
                }
                for (float& v : p.tensor.data) v *= decay;
            }
            loss_sum += loss;
            ++batches;
        }
        log.push_back({epoch, "train", loss_sum / double(batches ? batches : 1),
                       double(correct) / double(order.size())});
    }
    return log;
}

std::vector<uint32_t> assign_folds(const std::vector<uint8_t>& labels, uint32_t k,
                                   uint64_t seed) {
    if (k == 0) throw FoldTooSmall("k must be positive");
    std::mt19937_64 rng(seed);
    std::vector<uint32_t> folds(labels.size(), 0);
    uint64_t position = 0;  // continues across classes to balance fold totals
    for (int cls = 0; cls < 2; ++cls) {
        std::vector<size_t> idx;
        for (size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == cls) idx.push_back(i);
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        for (size_t i : idx) folds[i] = uint32_t(position++ % k);
    }
    return folds;
}

}  // namespace volseg
