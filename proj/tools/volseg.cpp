// Command-line front end: phantom generation, training, inference,
// canonicalization, evaluation, cross validation, saliency export.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "volseg/classify.hpp"
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

// key = value config with '#' comments; unknown keys are an error.
class RunConfig {
public:
    RunConfig(const std::set<std::string>& allowed) : allowed_(allowed) {}

    void load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file " + path);
        base_dir_ = fs::path(path).parent_path().string();
        std::string line;
        size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            size_t eq = line.find('=');
            std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            if (eq == std::string::npos) {
                throw ConfigError("config line " + std::to_string(lineno) +
                                  " is not key = value");
            }
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    void set(const std::string& key, const std::string& value) {
        if (!allowed_.count(key)) throw ConfigError("unknown config key '" + key + "'");
        values_[key] = value;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string str(const std::string& key, const std::string& def = "") const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }
    double num(const std::string& key, double def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            size_t pos = 0;
            double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' is not a number: " + it->second);
        }
    }
    int64_t integer(const std::string& key, int64_t def) const {
        double v = num(key, double(def));
        if (v != std::floor(v)) throw ConfigError("config key '" + key + "' must be an integer");
        return int64_t(v);
    }

    // Paths are resolved relative to the config file's directory.
    std::string path(const std::string& key, const std::string& def = "") const {
        std::string p = str(key, def);
        if (p.empty() || base_dir_.empty() || fs::path(p).is_absolute()) return p;
        return (fs::path(base_dir_) / p).string();
    }

    void echo(const std::string& out_dir) const {
        fs::create_directories(out_dir);
        std::ofstream os(out_dir + "/effective_config.txt", std::ios::trunc);
        for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    }

private:
    static std::string trim(const std::string& s) {
        size_t b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        size_t e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::set<std::string> allowed_;
    std::map<std::string, std::string> values_;
    std::string base_dir_;
};

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "run";
    int64_t seed = -1;      // flag override; -1 = use config/default
    int64_t workers = -1;
    std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key = value config file");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "seed override");
    cmd->add_option("--workers", args.workers, "worker thread count override");
    cmd->add_option("--set", args.overrides, "override a config key, key=value");
}

RunConfig make_config(const CommonArgs& args, std::set<std::string> allowed) {
    allowed.insert("seed");
    allowed.insert("workers");
    RunConfig cfg(allowed);
    if (!args.config_path.empty()) cfg.load_file(args.config_path);
    for (const std::string& o : args.overrides) {
        size_t eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + o);
        cfg.set(o.substr(0, eq), o.substr(eq + 1));
    }
    if (args.seed >= 0) cfg.set("seed", std::to_string(args.seed));
    if (args.workers >= 0) cfg.set("workers", std::to_string(args.workers));
    kernels::set_worker_count(int(cfg.integer("workers", 1)));
    return cfg;
}

std::array<uint32_t, 3> cube_dims(int64_t n) {
    return {uint32_t(n), uint32_t(n), uint32_t(n)};
}

struct Dataset {
    std::vector<ManifestEntry> entries;
    std::string dir;

    Volume image(size_t i) const { return read_volume(dir + "/" + entries[i].image_path); }
    Volume body(size_t i) const {
        return read_volume(dir + "/" + entries[i].body_mask_path);
    }
    Volume bv(size_t i) const { return read_volume(dir + "/" + entries[i].bv_mask_path); }
};

Dataset load_dataset(const std::string& manifest_path) {
    Dataset d;
    d.entries = read_manifest(manifest_path);
    d.dir = fs::path(manifest_path).parent_path().string();
    return d;
}

// BV training crops: windows centered on the ground-truth centroid with a
// deterministic jitter, clamped to fit.
std::vector<PatchPair> bv_crops(const Volume& norm, const Volume& bv_mask,
                                std::array<uint32_t, 3> window, size_t count,
                                int64_t jitter, std::mt19937_64& rng) {
    Moments m = foreground_moments(bv_mask);
    std::uniform_int_distribution<int64_t> jit(-jitter, jitter);
    std::vector<PatchPair> pairs;
    for (size_t i = 0; i < count; ++i) {
        Window w;
        for (int a = 0; a < 3; ++a) {
            int64_t size = int64_t(window[size_t(a)]);
            int64_t off = int64_t(std::llround(m.centroid[size_t(a)])) - size / 2 + jit(rng);
            off = std::max<int64_t>(0, std::min(off, int64_t(norm.dims[size_t(a)]) - size));
            w.offset[size_t(a)] = off;
            w.size[size_t(a)] = size;
        }
        pairs.push_back({crop_window(norm, w, PadPolicy::reject),
                         crop_window(bv_mask, w, PadPolicy::reject)});
    }
    return pairs;
}

int cmd_phantom(const CommonArgs& args) {
    RunConfig cfg = make_config(args, {"n", "mutant_fraction", "vol_dims",
                                       "body_fraction_target", "bv_fraction_max",
                                       "mutant_lobe_scale", "noise_level"});
    PhantomConfig pc;
    pc.vol_dims = cube_dims(cfg.integer("vol_dims", 64));
    pc.body_fraction_target = cfg.num("body_fraction_target", 0.10);
    pc.bv_fraction_max = cfg.num("bv_fraction_max", 0.005);
    pc.mutant_lobe_scale = cfg.num("mutant_lobe_scale", 1.8);
    pc.noise_level = cfg.num("noise_level", 0.1);
    pc.seed = uint64_t(cfg.integer("seed", 1));
    size_t n = size_t(cfg.integer("n", 10));
    double fraction = cfg.num("mutant_fraction", 0.5);
    cfg.echo(args.out_dir);
    generate_dataset(n, fraction, pc, args.out_dir);
    std::printf("wrote %zu samples to %s\n", n, args.out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& stage, const CommonArgs& args) {
    RunConfig cfg = make_config(
        args, {"manifest", "base_width", "input_dims", "epochs", "batch_size", "lr",
               "momentum", "loss_mix", "neg_pos_ratio", "containment_threshold",
               "window_stride", "out_dims", "max_pos_per_volume", "max_neg_per_volume",
               "crops_per_volume", "crop_jitter"});
    Dataset data = load_dataset(cfg.path("manifest", "dataset/manifest.txt"));

    TrainConfig tc;
    tc.epochs = uint32_t(cfg.integer("epochs", 5));
    tc.batch_size = uint32_t(cfg.integer("batch_size", 4));
    tc.lr = float(cfg.num("lr", 0.01));
    tc.momentum = float(cfg.num("momentum", 0.9));
    tc.seed = uint64_t(cfg.integer("seed", 1));
    tc.loss_mix = float(cfg.num("loss_mix", 0.5));
    tc.neg_pos_ratio = float(cfg.num("neg_pos_ratio", 3.0));

    NetworkSpec spec;
    spec.base_width = uint32_t(cfg.integer("base_width", 8));
    spec.input_dims = cube_dims(cfg.integer("input_dims", 32));

    cfg.echo(args.out_dir);
    Network net;
    TrainLog log;

    if (stage == "localizer") {
        spec.kind = NetworkKind::localizer;
        net = build_localizer(spec, tc.seed);
        uint32_t stride = uint32_t(cfg.integer("window_stride", spec.input_dims[0] / 4));
        double thr = cfg.num("containment_threshold", 0.95);
        size_t max_pos = size_t(cfg.integer("max_pos_per_volume", 6));
        size_t max_neg = size_t(cfg.integer("max_neg_per_volume", 18));
        std::mt19937_64 rng(tc.seed);
        std::vector<Volume> volumes;
        std::vector<LabeledWindow> windows;
        for (size_t i = 0; i < data.entries.size(); ++i) {
            volumes.push_back(normalize_intensity(data.image(i)));
            Volume bv = data.bv(i);
            auto scan = scan_windows(bv.dims, spec.input_dims, stride);
            auto labeled = label_windows(bv, scan, thr, i);
            std::vector<LabeledWindow> pos, neg;
            for (auto& lw : labeled) {
                (lw.label == WindowLabel::positive ? pos : neg).push_back(lw);
            }
            std::shuffle(pos.begin(), pos.end(), rng);
            std::shuffle(neg.begin(), neg.end(), rng);
            pos.resize(std::min(pos.size(), max_pos));
            neg.resize(std::min(neg.size(), max_neg));
            windows.insert(windows.end(), pos.begin(), pos.end());
            windows.insert(windows.end(), neg.begin(), neg.end());
        }
        log = train_localizer(volumes, windows, net, tc);
    } else if (stage == "bv-seg" || stage == "body-seg") {
        spec.kind = NetworkKind::fcn_segmenter;
        net = build_fcn_segmenter(spec, tc.seed);
        std::vector<PatchPair> pairs;
        if (stage == "body-seg") {
            uint32_t stride = uint32_t(cfg.integer("window_stride", spec.input_dims[0]));
            for (size_t i = 0; i < data.entries.size(); ++i) {
                auto p = extract_body_patches(normalize_intensity(data.image(i)),
                                              data.body(i), spec.input_dims, stride);
                pairs.insert(pairs.end(), p.begin(), p.end());
            }
        } else {
            size_t crops = size_t(cfg.integer("crops_per_volume", 4));
            int64_t jitter = cfg.integer("crop_jitter", 4);
            std::mt19937_64 rng(tc.seed);
            for (size_t i = 0; i < data.entries.size(); ++i) {
                auto p = bv_crops(normalize_intensity(data.image(i)), data.bv(i),
                                  spec.input_dims, crops, jitter, rng);
                pairs.insert(pairs.end(), p.begin(), p.end());
            }
        }
        log = train_segmenter(pairs, net, tc);
    } else if (stage == "classifier") {
        spec.kind = NetworkKind::classifier;
        net = build_classifier(spec, tc.seed);
        std::array<uint32_t, 3> out_dims =
            cube_dims(cfg.integer("out_dims", int64_t(spec.input_dims[0])));
        std::vector<Volume> masks;
        std::vector<uint8_t> labels;
        for (size_t i = 0; i < data.entries.size(); ++i) {
            masks.push_back(canonicalize(data.bv(i), out_dims));
            labels.push_back(uint8_t(data.entries[i].label));
        }
        log = train_classifier(masks, labels, net, tc);
    } else {
        throw ConfigError("unknown training stage " + stage);
    }

    save_checkpoint(net, args.out_dir + "/checkpoint.mck");
    std::ofstream os(args.out_dir + "/loss_log.txt", std::ios::trunc);
    os << format_loss_log(log);
    std::printf("trained %s: %s/checkpoint.mck\n", stage.c_str(), args.out_dir.c_str());
    return 0;
}

int cmd_infer(const std::string& stage, const CommonArgs& args) {
    RunConfig cfg = make_config(args, {"manifest", "image", "localizer_ckpt", "fcn_ckpt",
                                       "classifier_ckpt", "stride", "blend_mode",
                                       "threshold", "keep_largest", "out_dims"});
    cfg.echo(args.out_dir);

    SegmentOptions opts;
    opts.localizer_stride = uint32_t(cfg.integer("stride", 0));
    opts.body_stride = uint32_t(cfg.integer("stride", 0));
    opts.threshold = float(cfg.num("threshold", 0.5));
    opts.keep_largest_component = cfg.integer("keep_largest", 0) != 0;
    std::string mode = cfg.str("blend_mode", "weighted");
    if (mode == "weighted") opts.mode = BlendMode::weighted;
    else if (mode == "uniform") opts.mode = BlendMode::uniform;
    else throw ConfigError("blend_mode must be weighted or uniform");

    std::vector<std::pair<std::string, std::string>> inputs;  // stem, path
    if (cfg.has("image")) {
        std::string p = cfg.path("image");
        inputs.push_back({fs::path(p).stem().string(), p});
    } else {
        Dataset data = load_dataset(cfg.path("manifest", "dataset/manifest.txt"));
        for (const auto& e : data.entries) {
            // classification consumes BV masks; segmentation consumes images
            const std::string& rel = stage == "classify" ? e.bv_mask_path : e.image_path;
            inputs.push_back({fs::path(rel).stem().string(), data.dir + "/" + rel});
        }
    }

    if (stage == "bv") {
        Network localizer = load_checkpoint(cfg.path("localizer_ckpt"));
        Network fcn = load_checkpoint(cfg.path("fcn_ckpt"));
        for (const auto& [stem, path] : inputs) {
            Volume mask = segment_bv(read_volume(path), localizer, fcn, opts);
            write_volume(mask, args.out_dir + "/" + stem + "_bv_pred.mvf");
        }
    } else if (stage == "body") {
        Network fcn = load_checkpoint(cfg.path("fcn_ckpt"));
        for (const auto& [stem, path] : inputs) {
            Volume mask = segment_body(read_volume(path), fcn, opts);
            write_volume(mask, args.out_dir + "/" + stem + "_body_pred.mvf");
        }
    } else if (stage == "classify") {
        Network classifier = load_checkpoint(cfg.path("classifier_ckpt"));
        std::array<uint32_t, 3> out_dims =
            cube_dims(cfg.integer("out_dims", int64_t(classifier.spec.input_dims[0])));
        std::ofstream os(args.out_dir + "/predictions.txt", std::ios::trunc);
        for (const auto& [stem, path] : inputs) {
            // classify expects a BV mask volume as input
            Volume canonical = canonicalize(read_volume(path), out_dims);
            Prediction p = predict(canonical, classifier);
            char line[160];
            std::snprintf(line, sizeof(line), "%s,%s,%.6f\n", stem.c_str(),
                          p.label == ClassLabel::mutant ? "mutant" : "normal",
                          p.prob_mutant);
            os << line;
        }
    } else {
        throw ConfigError("unknown inference stage " + stage);
    }
    std::printf("inference (%s) written to %s\n", stage.c_str(), args.out_dir.c_str());
    return 0;
}

int cmd_canonicalize(const CommonArgs& args) {
    RunConfig cfg = make_config(args, {"manifest", "mask", "out_dims"});
    cfg.echo(args.out_dir);
    std::array<uint32_t, 3> out_dims = cube_dims(cfg.integer("out_dims", 32));
    if (cfg.has("mask")) {
        std::string p = cfg.path("mask");
        Volume canonical = canonicalize(read_volume(p), out_dims);
        write_volume(canonical,
                     args.out_dir + "/" + fs::path(p).stem().string() + "_canonical.mvf");
    } else {
        Dataset data = load_dataset(cfg.path("manifest", "dataset/manifest.txt"));
        std::vector<ManifestEntry> out_entries;
        for (size_t i = 0; i < data.entries.size(); ++i) {
            Volume canonical = canonicalize(data.bv(i), out_dims);
            ManifestEntry e = data.entries[i];
            std::string name =
                fs::path(e.bv_mask_path).stem().string() + "_canonical.mvf";
            write_volume(canonical, args.out_dir + "/" + name);
            e.bv_mask_path = name;
            out_entries.push_back(e);
        }
        write_manifest(out_entries, args.out_dir + "/manifest.txt");
    }
    std::printf("canonical masks written to %s\n", args.out_dir.c_str());
    return 0;
}

int cmd_evaluate(const CommonArgs& args) {
    RunConfig cfg = make_config(args, {"manifest", "pred_dir", "target"});
    cfg.echo(args.out_dir);
    Dataset data = load_dataset(cfg.path("manifest", "dataset/manifest.txt"));
    std::string pred_dir = cfg.path("pred_dir");
    std::string target = cfg.str("target", "body");
    if (target != "body" && target != "bv") throw ConfigError("target must be body or bv");

    double dice_sum = 0.0;
    double dice_min = 1.0;
    size_t n = 0;
    std::ofstream os(args.out_dir + "/metrics.txt", std::ios::trunc);
    for (size_t i = 0; i < data.entries.size(); ++i) {
        std::string stem = fs::path(data.entries[i].image_path).stem().string();
        std::string pred_path = pred_dir + "/" + stem + "_" + target + "_pred.mvf";
        Volume ref = target == "body" ? data.body(i) : data.bv(i);
        double d = dice(ref, read_volume(pred_path));
        char line[128];
        std::snprintf(line, sizeof(line), "dice_%s,%.6f\n", stem.c_str(), d);
        os << line;
        dice_sum += d;
        dice_min = std::min(dice_min, d);
        ++n;
    }
    char line[128];
    std::snprintf(line, sizeof(line), "mean_dice,%.6f\n", n ? dice_sum / double(n) : 0.0);
    os << line;
    std::snprintf(line, sizeof(line), "min_dice,%.6f\n", dice_min);
    os << line;
    std::printf("evaluated %zu predictions, mean dice %.4f\n", n,
                n ? dice_sum / double(n) : 0.0);
    return 0;
}

int cmd_crossval(const CommonArgs& args) {
    RunConfig cfg = make_config(args, {"manifest", "k", "out_dims", "base_width",
                                       "input_dims", "epochs", "batch_size", "lr",
                                       "momentum"});
    cfg.echo(args.out_dir);
    Dataset data = load_dataset(cfg.path("manifest", "dataset/manifest.txt"));

    TrainConfig tc;
    tc.epochs = uint32_t(cfg.integer("epochs", 8));
    tc.batch_size = uint32_t(cfg.integer("batch_size", 4));
    tc.lr = float(cfg.num("lr", 0.01));
    tc.momentum = float(cfg.num("momentum", 0.9));
    tc.seed = uint64_t(cfg.integer("seed", 1));

    NetworkSpec spec;
    spec.kind = NetworkKind::classifier;
    spec.base_width = uint32_t(cfg.integer("base_width", 8));
    spec.input_dims = cube_dims(cfg.integer("input_dims", 32));
    std::array<uint32_t, 3> out_dims =
        cube_dims(cfg.integer("out_dims", int64_t(spec.input_dims[0])));

    std::vector<Volume> masks;
    std::vector<ClassLabel> labels;
    for (size_t i = 0; i < data.entries.size(); ++i) {
        masks.push_back(canonicalize(data.bv(i), out_dims));
        labels.push_back(data.entries[i].label);
    }
    CrossValResult result =
        cross_validate(masks, labels, uint32_t(cfg.integer("k", 6)), tc, spec);
    std::string report = format_crossval_report(result);
    std::ofstream os(args.out_dir + "/crossval_report.txt", std::ios::trunc);
    os << report;
    std::fputs(report.c_str(), stdout);
    return 0;
}

int cmd_saliency(const CommonArgs& args) {
    RunConfig cfg = make_config(args, {"manifest", "mask", "classifier_ckpt", "out_dims"});
    cfg.echo(args.out_dir);
    Network classifier = load_checkpoint(cfg.path("classifier_ckpt"));
    std::array<uint32_t, 3> out_dims =
        cube_dims(cfg.integer("out_dims", int64_t(classifier.spec.input_dims[0])));

    auto emit = [&](const std::string& stem, const Volume& bv_mask) {
        Volume canonical = canonicalize(bv_mask, out_dims);
        SaliencyMap map = saliency(canonical, classifier);
        Volume out = Volume::make_label(map.dims);
        out.labels = map.values;
        write_volume(out, args.out_dir + "/" + stem + "_saliency.mvf");
    };
    if (cfg.has("mask")) {
        std::string p = cfg.path("mask");
        emit(fs::path(p).stem().string(), read_volume(p));
    } else {
        Dataset data = load_dataset(cfg.path("manifest", "dataset/manifest.txt"));
        for (size_t i = 0; i < data.entries.size(); ++i) {
            emit(fs::path(data.entries[i].bv_mask_path).stem().string(), data.bv(i));
        }
    }
    std::printf("saliency maps written to %s\n", args.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"volumetric embryo segmentation and mutant classification pipeline"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string train_stage, infer_stage;

    CLI::App* phantom = app.add_subcommand("phantom", "generate a synthetic dataset");
    CLI::App* train = app.add_subcommand("train", "train a pipeline stage");
    train->add_option("stage", train_stage, "localizer | bv-seg | body-seg | classifier")
        ->required();
    CLI::App* infer = app.add_subcommand("infer", "run inference");
    infer->add_option("stage", infer_stage, "bv | body | classify")->required();
    CLI::App* canonical = app.add_subcommand("canonicalize", "pose-normalize BV masks");
    CLI::App* evaluate = app.add_subcommand("evaluate", "segmentation metrics report");
    CLI::App* crossval = app.add_subcommand("crossval", "k-fold classifier evaluation");
    CLI::App* sal = app.add_subcommand("saliency", "export saliency volumes");
    for (CLI::App* cmd : {phantom, train, infer, canonical, evaluate, crossval, sal}) {
        add_common(cmd, args);
    }

    CLI11_PARSE(app, argc, argv);
    try {
        fs::create_directories(args.out_dir);
        if (phantom->parsed()) return cmd_phantom(args);
        if (train->parsed()) return cmd_train(train_stage, args);
        if (infer->parsed()) return cmd_infer(infer_stage, args);
        if (canonical->parsed()) return cmd_canonicalize(args);
        if (evaluate->parsed()) return cmd_evaluate(args);
        if (crossval->parsed()) return cmd_crossval(args);
        if (sal->parsed()) return cmd_saliency(args);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
