#include "volseg/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace volseg {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'K', '1'};
constexpr uint32_t kFormatVersion = 1;

class Builder {
public:
    explicit Builder(uint64_t seed) : rng_(seed) {}

    int add_conv(Network& net, size_t in_ch, size_t out_ch, size_t ksize) {
        int widx = add_param(net, "conv" + std::to_string(conv_id_) + ".weight",
                             {out_ch, in_ch, ksize, ksize, ksize},
                             /*fan_in=*/in_ch * ksize * ksize * ksize);
        add_param(net, "conv" + std::to_string(conv_id_) + ".bias", {out_ch}, 0);
        ++conv_id_;
        net.program.push_back({Instr::Op::conv, widx, widx + 1, int(ksize), -1});
        return widx;
    }

    void add_conv_relu(Network& net, size_t in_ch, size_t out_ch) {
        add_conv(net, in_ch, out_ch, 3);
        net.program.push_back({Instr::Op::relu});
    }

    void add_linear_layer(Network& net, size_t in_f, size_t out_f) {
        int widx = add_param(net, "fc" + std::to_string(fc_id_) + ".weight",
                             {out_f, in_f}, in_f);
        add_param(net, "fc" + std::to_string(fc_id_) + ".bias", {out_f}, 0);
        ++fc_id_;
        net.program.push_back({Instr::Op::linear, widx, widx + 1});
    }

private:
    int add_param(Network& net, std::string name, std::vector<size_t> shape,
                  size_t fan_in) {
        Parameter p;
        p.name = std::move(name);
        p.tensor = Tensor<float>::zeros(shape);
        p.velocity = Tensor<float>::zeros(shape);
        if (fan_in > 0) {
            // He-normal initialization.
            std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / float(fan_in)));
            for (float& v : p.tensor.data) v = dist(rng_);
        }
        net.params.push_back(std::move(p));
        return int(net.params.size()) - 1;
    }

    std::mt19937_64 rng_;
    int conv_id_ = 1;
    int fc_id_ = 1;
};

void require_divisible(const NetworkSpec& spec, uint32_t divisor) {
    for (uint32_t d : spec.input_dims) {
        if (d == 0 || d % divisor != 0) {
            throw BadDims("input dims must be positive and divisible by " +
                          std::to_string(divisor));
        }
    }
    if (spec.base_width == 0) throw BadDims("base_width must be positive");
}

template <typename T>
void write_le(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw TruncatedFile("checkpoint ended early");
    return v;
}

}  // namespace

int Network::weight_layer_count() const {
    int n = 0;
    for (const Instr& ins : program) {
        if (ins.op == Instr::Op::conv || ins.op == Instr::Op::linear) ++n;
    }
    return n;
}

Network build_localizer(const NetworkSpec& spec, uint64_t seed) {
    require_divisible(spec, 16);
    Network net;
    net.spec = spec;
    net.spec.kind = NetworkKind::localizer;
    Builder b(seed);
    const size_t w = spec.base_width;
    size_t in_ch = 1;
    for (size_t stage = 0; stage < 4; ++stage) {
        size_t out_ch = w << stage;  // w, 2w, 4w, 8w
        b.add_conv_relu(net, in_ch, out_ch);
        b.add_conv_relu(net, out_ch, out_ch);
        net.program.push_back({Instr::Op::maxpool});
        in_ch = out_ch;
    }
    net.program.push_back({Instr::Op::global_avg_pool});
    b.add_linear_layer(net, 8 * w, 4 * w);
    net.program.push_back({Instr::Op::relu});
    b.add_linear_layer(net, 4 * w, 2);
    return net;
}

Network build_fcn_segmenter(const NetworkSpec& spec, uint64_t seed) {
    require_divisible(spec, 8);
    Network net;
    net.spec = spec;
    net.spec.kind = NetworkKind::fcn_segmenter;
    Builder b(seed);
    const size_t w = spec.base_width;
    const size_t widths[3] = {w, 2 * w, 4 * w};

    size_t in_ch = 1;
    for (int stage = 0; stage < 3; ++stage) {
        b.add_conv_relu(net, in_ch, widths[stage]);
        b.add_conv_relu(net, widths[stage], widths[stage]);
        net.program.push_back({Instr::Op::save_skip, -1, -1, 3, stage});
        net.program.push_back({Instr::Op::maxpool});
        in_ch = widths[stage];
    }
    b.add_conv_relu(net, 4 * w, 8 * w);
    b.add_conv_relu(net, 8 * w, 8 * w);
    in_ch = 8 * w;
    for (int stage = 2; stage >= 0; --stage) {
        net.program.push_back({Instr::Op::upsample});
        net.program.push_back({Instr::Op::concat_skip, -1, -1, 3, stage});
        b.add_conv_relu(net, widths[stage] + in_ch, widths[stage]);
        b.add_conv_relu(net, widths[stage], widths[stage]);
        in_ch = widths[stage];
    }
    b.add_conv(net, w, 2, 1);  // 1x1x1 projection to 2-class logits
    return net;
}

Network build_classifier(const NetworkSpec& spec, uint64_t seed) {
    require_divisible(spec, 8);
    Network net;
    net.spec = spec;
    net.spec.kind = NetworkKind::classifier;
    Builder b(seed);
    const size_t w = spec.base_width;
    const size_t widths[3] = {w, 2 * w, 4 * w};
    const int conv_counts[3] = {2, 2, 3};

    size_t in_ch = 1;
    for (int stage = 0; stage < 3; ++stage) {
        for (int i = 0; i < conv_counts[stage]; ++i) {
            b.add_conv_relu(net, i == 0 ? in_ch : widths[stage], widths[stage]);
        }
        net.program.push_back({Instr::Op::maxpool});
        in_ch = widths[stage];
    }
    net.program.push_back({Instr::Op::global_avg_pool});
    b.add_linear_layer(net, 4 * w, 2 * w);
    net.program.push_back({Instr::Op::relu});
    b.add_linear_layer(net, 2 * w, 2);
    return net;
}

Network build_network(const NetworkSpec& spec, uint64_t seed) {
    switch (spec.kind) {
        case NetworkKind::localizer: return build_localizer(spec, seed);
        case NetworkKind::fcn_segmenter: return build_fcn_segmenter(spec, seed);
        case NetworkKind::classifier: return build_classifier(spec, seed);
    }
    throw BadDims("unknown network kind");
}

void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoFailure("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    write_le(os, kFormatVersion);
    write_le(os, uint8_t(net.spec.kind));
    write_le(os, net.spec.base_width);
    for (uint32_t d : net.spec.input_dims) write_le(os, d);
    write_le(os, uint32_t(net.params.size()));
    for (const Parameter& p : net.params) {
        write_le(os, uint16_t(p.name.size()));
        os.write(p.name.data(), std::streamsize(p.name.size()));
        write_le(os, uint8_t(p.tensor.shape.size()));
        for (size_t d : p.tensor.shape) write_le(os, uint32_t(d));
        os.write(reinterpret_cast<const char*>(p.tensor.data.data()),
                 std::streamsize(p.tensor.data.size() * 4));
    }
    os.flush();
    if (!os) throw IoFailure("write failed for " + path);
}

Network load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw TruncatedFile("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is) throw TruncatedFile(path + ": header too short");
    if (std::memcmp(magic, kMagic, 4) != 0) throw BadMagic(path + ": bad magic");

    uint32_t version = read_le<uint32_t>(is);
    if (version != kFormatVersion) throw SpecMismatch(path + ": unknown format version");

    NetworkSpec spec;
    uint8_t kind = read_le<uint8_t>(is);
    if (kind > 2) throw SpecMismatch(path + ": unknown network kind");
    spec.kind = NetworkKind(kind);
    spec.base_width = read_le<uint32_t>(is);
    for (int a = 0; a < 3; ++a) spec.input_dims[size_t(a)] = read_le<uint32_t>(is);

    Network net = build_network(spec, /*seed=*/0);

    uint32_t count = read_le<uint32_t>(is);
    if (count != net.params.size()) {
        throw SpecMismatch(path + ": parameter count does not match spec");
    }
    for (Parameter& p : net.params) {
        uint16_t name_len = read_le<uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw TruncatedFile(path + ": truncated parameter name");
        if (name != p.name) throw SpecMismatch(path + ": parameter name mismatch: " + name);
        uint8_t ndim = read_le<uint8_t>(is);
        std::vector<size_t> shape(ndim);
        for (uint8_t i = 0; i < ndim; ++i) shape[i] = read_le<uint32_t>(is);
        if (shape != p.tensor.shape) {
            throw ShapeMismatch(path + ": shape mismatch for " + name);
        }
        is.read(reinterpret_cast<char*>(p.tensor.data.data()),
                std::streamsize(p.tensor.data.size() * 4));
        if (!is) throw TruncatedFile(path + ": truncated parameter payload");
        std::fill(p.velocity.data.begin(), p.velocity.data.end(), 0.0f);
    }
    return net;
}

}  // namespace volseg
