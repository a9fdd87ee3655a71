#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "volseg/autodiff.hpp"
#include "volseg/tensor.hpp"

namespace volseg {

enum class NetworkKind : uint8_t { localizer = 0, fcn_segmenter = 1, classifier = 2 };

struct NetworkSpec {
    NetworkKind kind = NetworkKind::localizer;
    uint32_t base_width = 8;
    std::array<uint32_t, 3> input_dims{32, 32, 32};

    bool operator==(const NetworkSpec&) const = default;
};

struct Parameter {
    std::string name;
    Tensor<float> tensor;
    Tensor<float> velocity;  // momentum buffer, same shape
};

// One step of the layer program interpreted by Network::forward.
struct Instr {
    enum class Op : uint8_t {
        conv,        // weight_idx, bias_idx, ksize
        relu,
        maxpool,
        upsample,
        save_skip,   // slot
        concat_skip, // slot
        global_avg_pool,
        linear,      // weight_idx, bias_idx
    };
    Op op;
    int weight_idx = -1;
    int bias_idx = -1;
    int ksize = 3;
    int slot = -1;
};

struct Network {
    NetworkSpec spec;
    std::vector<Parameter> params;
    std::vector<Instr> program;

    int weight_layer_count() const;

    // Runs the program on the tape. param_ids must be tape leaves matching
    // params in order (see make_param_leaves); returns the output node id.
    template <typename T>
    int forward(Tape<T>& tape, int input, const std::vector<int>& param_ids) const {
        int cur = input;
        std::vector<int> skips(8, -1);
        for (const Instr& ins : program) {
            switch (ins.op) {
                case Instr::Op::conv:
                    cur = tape.conv3d(cur, param_ids[size_t(ins.weight_idx)],
                                      param_ids[size_t(ins.bias_idx)]);
                    break;
                case Instr::Op::relu:
                    cur = tape.relu(cur);
                    break;
                case Instr::Op::maxpool:
                    cur = tape.maxpool3d(cur);
                    break;
                case Instr::Op::upsample:
                    cur = tape.upsample_nearest3d(cur);
                    break;
                case Instr::Op::save_skip:
                    skips[size_t(ins.slot)] = cur;
                    break;
                case Instr::Op::concat_skip:
                    cur = tape.concat_channels(skips[size_t(ins.slot)], cur);
                    break;
                case Instr::Op::global_avg_pool:
                    cur = tape.global_avg_pool(cur);
                    break;
                case Instr::Op::linear:
                    cur = tape.linear(cur, param_ids[size_t(ins.weight_idx)],
                                      param_ids[size_t(ins.bias_idx)]);
                    break;
            }
        }
        return cur;
    }

    // Convenience forward using the network's own (float) parameters.
    template <typename T>
    int forward(Tape<T>& tape, int input) const {
        return forward(tape, input, make_param_leaves(tape, /*needs_grad=*/false));
    }

    template <typename T>
    std::vector<int> make_param_leaves(Tape<T>& tape, bool needs_grad) const {
        std::vector<int> ids;
        ids.reserve(params.size());
        for (const Parameter& p : params) {
            ids.push_back(tape.leaf(p.tensor.template cast<T>(), needs_grad));
        }
        return ids;
    }
};

// Builders. `seed` drives He-normal weight initialization; biases start at 0.
Network build_localizer(const NetworkSpec& spec, uint64_t seed);
Network build_fcn_segmenter(const NetworkSpec& spec, uint64_t seed);
Network build_classifier(const NetworkSpec& spec, uint64_t seed);
Network build_network(const NetworkSpec& spec, uint64_t seed);

// MCK1 checkpoint container.
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace volseg
