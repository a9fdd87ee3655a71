// Compares the OpenMP conv3d kernel against the serial reference and checks
// that the two agree bit for bit.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <random>

#include "volseg/kernels.hpp"
#include "volseg/tensor.hpp"

using namespace volseg;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
    int workers = argc > 1 ? std::atoi(argv[1]) : 1;
    int reps = argc > 2 ? std::atoi(argv[2]) : 3;
    kernels::set_worker_count(workers);

    struct Case {
        size_t n, cin, cout, d;
    };
    const Case cases[] = {{1, 1, 8, 32}, {1, 8, 16, 16}, {2, 16, 32, 8}, {4, 32, 32, 4}};

    std::mt19937_64 rng(7);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::printf("%-20s %14s %14s %8s  %s\n", "shape", "reference ms", "parallel ms",
                "speedup", "bit-identical");
    for (const Case& c : cases) {
        Tensor<float> x({c.n, c.cin, c.d, c.d, c.d});
        Tensor<float> w({c.cout, c.cin, 3, 3, 3});
        Tensor<float> b({c.cout});
        for (float& v : x.data) v = dist(rng);
        for (float& v : w.data) v = dist(rng);
        for (float& v : b.data) v = dist(rng);

        Tensor<float> y_ref({c.n, c.cout, c.d, c.d, c.d});
        Tensor<float> y_par({c.n, c.cout, c.d, c.d, c.d});
        double ref_ms = time_ms([&] { kernels::conv3d_forward_ref(x, w, b, y_ref); }, reps);
        double par_ms = time_ms([&] { kernels::conv3d_forward(x, w, b, y_par); }, reps);
        bool same = std::memcmp(y_ref.data.data(), y_par.data.data(),
                                y_ref.size() * sizeof(float)) == 0;
        char shape[64];
        std::snprintf(shape, sizeof(shape), "n%zu c%zu->%zu d%zu", c.n, c.cin, c.cout,
                      c.d);
        std::printf("%-20s %14.3f %14.3f %7.2fx  %s\n", shape, ref_ms, par_ms,
                    ref_ms / par_ms, same ? "yes" : "NO");
        if (!same) return 1;
    }
    return 0;
}
