#pragma once

// Finite-difference gradient checking. Runs entirely in 64-bit; central
// differences with a configurable step. Relative error is
// |a - n| / max(|a|, |n|, 1e-8).

#include <algorithm>
#include <cmath>
#include <random>

#include "volseg/autodiff.hpp"
#include "volseg/nets.hpp"
#include "volseg/tensor.hpp"

namespace volseg {

inline double relative_error(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

// build: (Tape<double>&, int input_id) -> scalar root id.
// Checks d(root)/d(input) over every input coordinate.
template <typename BuildFn>
double grad_check_input(BuildFn build, const Tensor<double>& input, double step = 1e-4) {
    Tape<double> tape;
    int x = tape.leaf(input, /*needs_grad=*/true);
    int root = build(tape, x);
    tape.backward(root);
    Tensor<double> analytic = tape.grad(x);

    auto eval = [&](const Tensor<double>& in) {
        Tape<double> t;
        int xi = t.leaf(in, false);
        return t.value(build(t, xi)).data[0];
    };

    double max_err = 0.0;
    Tensor<double> probe = input;
    for (size_t i = 0; i < probe.size(); ++i) {
        double orig = probe.data[i];
        probe.data[i] = orig + step;
        double fp = eval(probe);
        probe.data[i] = orig - step;
        double fm = eval(probe);
        probe.data[i] = orig;
        double numeric = (fp - fm) / (2.0 * step);
        max_err = std::max(max_err, relative_error(analytic.data[i], numeric));
    }
    return max_err;
}

// Checks parameter and input gradients of a whole network, with the scalar
// root being a fixed random-coefficient contraction of the network output.
// max_coords_per_tensor limits the finite-difference probes per tensor
// (seeded subsample; 0 = check everything).
inline double grad_check_network(const Network& net, const Tensor<double>& input,
                                 size_t max_coords_per_tensor = 0, uint64_t seed = 1234,
                                 double step = 1e-4) {
    std::mt19937_64 rng(seed);

    // Double-precision working copy of the parameters.
    std::vector<Tensor<double>> params;
    params.reserve(net.params.size());
    for (const Parameter& p : net.params) params.push_back(p.tensor.cast<double>());

    auto run = [&](const Tensor<double>& in, const Tensor<double>* coeffs_out,
                   bool with_grad, std::vector<Tensor<double>>* grads_out,
                   Tensor<double>* input_grad_out) {
        Tape<double> tape;
        int x = tape.leaf(in, with_grad);
        std::vector<int> ids;
        ids.reserve(params.size());
        for (const auto& p : params) ids.push_back(tape.leaf(p, with_grad));
        int out = net.forward(tape, x, ids);
        int root = tape.weighted_sum(out, *coeffs_out);
        if (with_grad) {
            tape.backward(root);
            grads_out->clear();
            for (int id : ids) grads_out->push_back(tape.grad(id));
            *input_grad_out = tape.grad(x);
        }
        return tape.value(root).data[0];
    };

    // Fixed contraction coefficients over the output tensor.
    Tensor<double> coeffs;
    {
        Tape<double> probe;
        int x = probe.leaf(input, false);
        std::vector<int> ids;
        for (const auto& p : params) ids.push_back(probe.leaf(p, false));
        int out = net.forward(probe, x, ids);
        coeffs = Tensor<double>(probe.value(out).shape);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (double& c : coeffs.data) c = u(rng);
    }

    std::vector<Tensor<double>> analytic;
    Tensor<double> analytic_input;
    run(input, &coeffs, true, &analytic, &analytic_input);

    auto pick_coords = [&](size_t n) {
        std::vector<size_t> coords;
        if (max_coords_per_tensor == 0 || n <= max_coords_per_tensor) {
            coords.resize(n);
            for (size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            std::uniform_int_distribution<size_t> u(0, n - 1);
            for (size_t i = 0; i < max_coords_per_tensor; ++i) coords.push_back(u(rng));
        }
        return coords;
    };

    double max_err = 0.0;
    auto check_tensor = [&](Tensor<double>& t, const Tensor<double>& grad) {
        for (size_t i : pick_coords(t.size())) {
            double orig = t.data[i];
            t.data[i] = orig + step;
            double fp = run(input, &coeffs, false, nullptr, nullptr);
            t.data[i] = orig - step;
            double fm = run(input, &coeffs, false, nullptr, nullptr);
            t.data[i] = orig;
            double numeric = (fp - fm) / (2.0 * step);
            max_err = std::max(max_err, relative_error(grad.data[i], numeric));
        }
    };

    for (size_t p = 0; p < params.size(); ++p) check_tensor(params[p], analytic[p]);
    Tensor<double> in_copy = input;
    {
        for (size_t i : pick_coords(in_copy.size())) {
            double orig = in_copy.data[i];
            in_copy.data[i] = orig + step;
            double fp = run(in_copy, &coeffs, false, nullptr, nullptr);
            in_copy.data[i] = orig - step;
            double fm = run(in_copy, &coeffs, false, nullptr, nullptr);
            in_copy.data[i] = orig;
            double numeric = (fp - fm) / (2.0 * step);
            max_err = std::max(max_err, relative_error(analytic_input.data[i], numeric));
        }
    }
    return max_err;
}

}  // namespace volseg
