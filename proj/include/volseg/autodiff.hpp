#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "volseg/kernels.hpp"
#include "volseg/tensor.hpp"

namespace volseg {

// Reverse-mode tape. Nodes append after their inputs, so reverse creation
// order is a reverse topological order. T = float for training, double for
// gradient checking.
template <typename T>
class Tape {
public:
    explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

    int leaf(Tensor<T> value, bool needs_grad = false) {
        return add_node(std::move(value), needs_grad, {});
    }

    const Tensor<T>& value(int id) const { return nodes_[size_t(id)].value; }

    Tensor<T>& grad(int id) {
        Node& n = nodes_[size_t(id)];
        if (n.grad.data.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
        return n.grad;
    }

    size_t node_count() const { return nodes_.size(); }

    // --- operators -------------------------------------------------------

    int conv3d(int x, int w, int b) {
        const auto& xv = value(x);
        const auto& wv = value(w);
        const auto& bv = value(b);
        if (xv.shape.size() != 5 || wv.shape.size() != 5 || bv.shape.size() != 1 ||
            xv.shape[1] != wv.shape[1] || wv.shape[0] != bv.shape[0] ||
            wv.shape[2] != wv.shape[3] || wv.shape[2] != wv.shape[4] ||
            (wv.shape[2] != 1 && wv.shape[2] != 3)) {
            throw ShapeMismatch("conv3d: incompatible shapes " + shape_string(xv.shape) +
                                " vs " + shape_string(wv.shape));
        }
        Tensor<T> out({xv.shape[0], wv.shape[0], xv.shape[2], xv.shape[3], xv.shape[4]});
        kernels::conv3d_forward(xv, wv, bv, out);
        int id = add_node(std::move(out), true, {x, w, b});
        nodes_[size_t(id)].backward = [this, id, x, w, b]() {
            const Tensor<T>& g = nodes_[size_t(id)].grad;
            Tensor<T> dx = Tensor<T>::zeros(value(x).shape);
            Tensor<T> dw = Tensor<T>::zeros(value(w).shape);
            Tensor<T> db = Tensor<T>::zeros(value(b).shape);
            kernels::conv3d_backward(value(x), value(w), g, dx, dw, db);
            accumulate(x, dx);
            accumulate(w, dw);
            accumulate(b, db);
        };
        return id;
    }

    int relu(int x) {
        Tensor<T> out = value(x);
        for (T& v : out.data) v = v > T(0) ? v : T(0);
        int id = add_node(std::move(out), true, {x});
        nodes_[size_t(id)].backward = [this, id, x]() {
            const Tensor<T>& g = nodes_[size_t(id)].grad;
            const Tensor<T>& xv = value(x);
            Tensor<T> dx = Tensor<T>::zeros(xv.shape);
            for (size_t i = 0; i < dx.size(); ++i) {
                dx.data[i] = xv.data[i] > T(0) ? g.data[i] : T(0);
            }
            accumulate(x, dx);
        };
        return id;
    }

    int maxpool3d(int x) {
        const auto& xv = value(x);
        if (xv.shape.size() != 5) throw ShapeMismatch("maxpool3d: need 5-d input");
        if (xv.shape[2] % 2 || xv.shape[3] % 2 || xv.shape[4] % 2) {
            throw OddDims("maxpool3d: spatial dims must be even, got " +
                          shape_string(xv.shape));
        }
        Tensor<T> out({xv.shape[0], xv.shape[1], xv.shape[2] / 2, xv.shape[3] / 2,
                       xv.shape[4] / 2});
        auto argmax = std::make_shared<std::vector<size_t>>(out.size());
        kernels::maxpool3d_forward(xv, out, *argmax);
        int id = add_node(std::move(out), true, {x});
        nodes_[size_t(id)].backward = [this, id, x, argmax]() {
            Tensor<T> dx = Tensor<T>::zeros(value(x).shape);
            kernels::maxpool3d_backward(nodes_[size_t(id)].grad, *argmax, dx);
            accumulate(x, dx);
        };
        return id;
    }

    int upsample_nearest3d(int x) {
        const auto& xv = value(x);
        if (xv.shape.size() != 5) throw ShapeMismatch("upsample: need 5-d input");
        Tensor<T> out({xv.shape[0], xv.shape[1], 2 * xv.shape[2], 2 * xv.shape[3],
                       2 * xv.shape[4]});
        kernels::upsample2_forward(xv, out);
        int id = add_node(std::move(out), true, {x});
        nodes_[size_t(id)].backward = [this, id, x]() {
            Tensor<T> dx = Tensor<T>::zeros(value(x).shape);
            kernels::upsample2_backward(nodes_[size_t(id)].grad, dx);
            accumulate(x, dx);
        };
        return id;
    }

    int concat_channels(int a, int b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        if (av.shape.size() != 5 || bv.shape.size() != 5 || av.shape[0] != bv.shape[0] ||
            av.shape[2] != bv.shape[2] || av.shape[3] != bv.shape[3] ||
            av.shape[4] != bv.shape[4]) {
            throw ShapeMismatch("concat_channels: incompatible shapes");
        }
        const size_t N = av.shape[0], Ca = av.shape[1], Cb = bv.shape[1];
        const size_t S = av.shape[2] * av.shape[3] * av.shape[4];
        Tensor<T> out({N, Ca + Cb, av.shape[2], av.shape[3], av.shape[4]});
        for (size_t n = 0; n < N; ++n) {
            std::copy(av.data.begin() + n * Ca * S, av.data.begin() + (n + 1) * Ca * S,
                      out.data.begin() + n * (Ca + Cb) * S);
            std::copy(bv.data.begin() + n * Cb * S, bv.data.begin() + (n + 1) * Cb * S,
                      out.data.begin() + (n * (Ca + Cb) + Ca) * S);
        }
        int id = add_node(std::move(out), true, {a, b});
        nodes_[size_t(id)].backward = [this, id, a, b, N, Ca, Cb, S]() {
            const Tensor<T>& g = nodes_[size_t(id)].grad;
            Tensor<T> da = Tensor<T>::zeros(value(a).shape);
            Tensor<T> db = Tensor<T>::zeros(value(b).shape);
            for (size_t n = 0; n < N; ++n) {
                std::copy(g.data.begin() + n * (Ca + Cb) * S,
                          g.data.begin() + (n * (Ca + Cb) + Ca) * S,
                          da.data.begin() + n * Ca * S);
                std::copy(g.data.begin() + (n * (Ca + Cb) + Ca) * S,
                          g.data.begin() + (n + 1) * (Ca + Cb) * S,
                          db.data.begin() + n * Cb * S);
            }
            accumulate(a, da);
            accumulate(b, db);
        };
        return id;
    }

    int global_avg_pool(int x) {
        const auto& xv = value(x);
        if (xv.shape.size() != 5) throw ShapeMismatch("global_avg_pool: need 5-d input");
        const size_t N = xv.shape[0], C = xv.shape[1];
        const size_t S = xv.shape[2] * xv.shape[3] * xv.shape[4];
        Tensor<T> out({N, C});
        for (size_t nc = 0; nc < N * C; ++nc) {
            T acc = T(0);
            for (size_t i = 0; i < S; ++i) acc += xv.data[nc * S + i];
            out.data[nc] = acc / T(S);
        }
        int id = add_node(std::move(out), true, {x});
        nodes_[size_t(id)].backward = [this, id, x, N, C, S]() {
            const Tensor<T>& g = nodes_[size_t(id)].grad;
            Tensor<T> dx = Tensor<T>::zeros(value(x).shape);
            for (size_t nc = 0; nc < N * C; ++nc) {
                T gv = g.data[nc] / T(S);
                for (size_t i = 0; i < S; ++i) dx.data[nc * S + i] = gv;
            }
            accumulate(x, dx);
        };
        return id;
    }

    int linear(int x, int w, int b) {
        const auto& xv = value(x);
        const auto& wv = value(w);
        const auto& bv = value(b);
        if (xv.shape.size() != 2 || wv.shape.size() != 2 || xv.shape[1] != wv.shape[1] ||
            bv.shape.size() != 1 || bv.shape[0] != wv.shape[0]) {
            throw ShapeMismatch("linear: incompatible shapes");
        }
        const size_t N = xv.shape[0], F = xv.shape[1], G = wv.shape[0];
        Tensor<T> out({N, G});
        for (size_t n = 0; n < N; ++n) {
            for (size_t g = 0; g < G; ++g) {
                T acc = bv.data[g];
                for (size_t f = 0; f < F; ++f) acc += wv.data[g * F + f] * xv.data[n * F + f];
                out.data[n * G + g] = acc;
            }
        }
        int id = add_node(std::move(out), true, {x, w, b});
        nodes_[size_t(id)].backward = [this, id, x, w, b, N, F, G]() {
            const Tensor<T>& g = nodes_[size_t(id)].grad;
            const Tensor<T>& xv = value(x);
            const Tensor<T>& wv = value(w);
            Tensor<T> dx = Tensor<T>::zeros(xv.shape);
            Tensor<T> dw = Tensor<T>::zeros(wv.shape);
            Tensor<T> db = Tensor<T>::zeros(value(b).shape);
            for (size_t n = 0; n < N; ++n) {
                for (size_t go = 0; go < G; ++go) {
                    T gv = g.data[n * G + go];
                    db.data[go] += gv;
                    for (size_t f = 0; f < F; ++f) {
                        dx.data[n * F + f] += gv * wv.data[go * F + f];
                        dw.data[go * F + f] += gv * xv.data[n * F + f];
                    }
                }
            }
            accumulate(x, dx);
            accumulate(w, dw);
            accumulate(b, db);
        };
        return id;
    }

    // logits [N,2], labels in {0,1}. Mean over batch of class-weighted
    // -log softmax(logits)[label], max-subtracted for stability.
    int softmax_cross_entropy(int logits, const std::vector<int>& labels,
                              std::array<T, 2> class_weights) {
        const auto& lv = value(logits);
        if (lv.shape.size() != 2 || lv.shape[1] != 2 || labels.size() != lv.shape[0]) {
            throw ShapeMismatch("softmax_cross_entropy: need [N,2] logits and N labels");
        }
        const size_t N = lv.shape[0];
        auto probs = std::make_shared<std::vector<T>>(2 * N);
        T loss = T(0);
        for (size_t n = 0; n < N; ++n) {
            T z0 = lv.data[2 * n], z1 = lv.data[2 * n + 1];
            T m = std::max(z0, z1);
            T e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
            T Z = e0 + e1;
            (*probs)[2 * n] = e0 / Z;
            (*probs)[2 * n + 1] = e1 / Z;
            int y = labels[n];
            T zy = y == 0 ? z0 : z1;
            loss += class_weights[size_t(y)] * (std::log(Z) - (zy - m));
        }
        loss /= T(N);
        int id = add_node(Tensor<T>::scalar(loss), true, {logits});
        nodes_[size_t(id)].backward = [this, id, logits, labels, class_weights, probs,
                                       N]() {
            T g = nodes_[size_t(id)].grad.data[0];
            Tensor<T> dl = Tensor<T>::zeros(value(logits).shape);
            for (size_t n = 0; n < N; ++n) {
                int y = labels[n];
                T wy = class_weights[size_t(y)];
                for (int j = 0; j < 2; ++j) {
                    T ind = (j == y) ? T(1) : T(0);
                    dl.data[2 * n + size_t(j)] =
                        g * wy * ((*probs)[2 * n + size_t(j)] - ind) / T(N);
                }
            }
            accumulate(logits, dl);
        };
        return id;
    }

    // Per-voxel weighted cross entropy for segmentation logits [N,2,D,H,W]
    // against a {0,1} ground-truth field with N*D*H*W elements.
    int voxel_softmax_cross_entropy(int logits, const Tensor<T>& gt,
                                    std::array<T, 2> class_weights) {
        const auto& lv = value(logits);
        if (lv.shape.size() != 5 || lv.shape[1] != 2) {
            throw ShapeMismatch("voxel CE: need [N,2,D,H,W] logits");
        }
        const size_t N = lv.shape[0];
        const size_t S = lv.shape[2] * lv.shape[3] * lv.shape[4];
        if (gt.size() != N * S) throw ShapeMismatch("voxel CE: ground truth size mismatch");
        auto probs = std::make_shared<std::vector<T>>(2 * N * S);
        T loss = T(0);
        for (size_t n = 0; n < N; ++n) {
            const T* z0p = &lv.data[(n * 2 + 0) * S];
            const T* z1p = &lv.data[(n * 2 + 1) * S];
            for (size_t i = 0; i < S; ++i) {
                T z0 = z0p[i], z1 = z1p[i];
                T m = std::max(z0, z1);
                T e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
                T Z = e0 + e1;
                size_t v = n * S + i;
                (*probs)[2 * v] = e0 / Z;
                (*probs)[2 * v + 1] = e1 / Z;
                int y = gt.data[v] > T(0.5) ? 1 : 0;
                T zy = y == 0 ? z0 : z1;
                loss += class_weights[size_t(y)] * (std::log(Z) - (zy - m));
            }
        }
        loss /= T(N * S);
        int id = add_node(Tensor<T>::scalar(loss), true, {logits});
        auto gt_copy = std::make_shared<Tensor<T>>(gt);
        nodes_[size_t(id)].backward = [this, id, logits, gt_copy, class_weights, probs, N,
                                       S]() {
            T g = nodes_[size_t(id)].grad.data[0];
            Tensor<T> dl = Tensor<T>::zeros(value(logits).shape);
            for (size_t n = 0; n < N; ++n) {
                for (size_t i = 0; i < S; ++i) {
                    size_t v = n * S + i;
                    int y = gt_copy->data[v] > T(0.5) ? 1 : 0;
                    T wy = class_weights[size_t(y)];
                    for (int j = 0; j < 2; ++j) {
                        T ind = (j == y) ? T(1) : T(0);
                        dl.data[(n * 2 + size_t(j)) * S + i] =
                            g * wy * ((*probs)[2 * v + size_t(j)] - ind) / T(N * S);
                    }
                }
            }
            accumulate(logits, dl);
        };
        return id;
    }

    // Foreground probability from 2-channel logits: sigmoid(z1 - z0),
    // identical to the 2-class softmax foreground channel.
    int fg_prob(int logits) {
        const auto& lv = value(logits);
        if (lv.shape.size() != 5 || lv.shape[1] != 2) {
            throw ShapeMismatch("fg_prob: need [N,2,D,H,W] logits");
        }
        const size_t N = lv.shape[0];
        const size_t S = lv.shape[2] * lv.shape[3] * lv.shape[4];
        Tensor<T> out({N, 1, lv.shape[2], lv.shape[3], lv.shape[4]});
        for (size_t n = 0; n < N; ++n) {
            const T* z0p = &lv.data[(n * 2 + 0) * S];
            const T* z1p = &lv.data[(n * 2 + 1) * S];
            for (size_t i = 0; i < S; ++i) {
                T d = z1p[i] - z0p[i];
                out.data[n * S + i] = d >= T(0) ? T(1) / (T(1) + std::exp(-d))
                                                : std::exp(d) / (T(1) + std::exp(d));
            }
        }
        int id = add_node(std::move(out), true, {logits});
        nodes_[size_t(id)].backward = [this, id, logits, N, S]() {
            const Tensor<T>& g = nodes_[size_t(id)].grad;
            const Tensor<T>& p = nodes_[size_t(id)].value;
            Tensor<T> dl = Tensor<T>::zeros(value(logits).shape);
            for (size_t n = 0; n < N; ++n) {
                for (size_t i = 0; i < S; ++i) {
                    T pv = p.data[n * S + i];
                    T s = g.data[n * S + i] * pv * (T(1) - pv);
                    dl.data[(n * 2 + 1) * S + i] += s;
                    dl.data[(n * 2 + 0) * S + i] -= s;
                }
            }
            accumulate(logits, dl);
        };
        return id;
    }

    // 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps)
    int soft_dice_loss(int prob_fg, const Tensor<T>& gt, T eps = T(1)) {
        const auto& pv = value(prob_fg);
        if (pv.size() != gt.size()) throw ShapeMismatch("soft_dice_loss: size mismatch");
        T inter = T(0), psum = T(0), gsum = T(0);
        for (size_t i = 0; i < pv.size(); ++i) {
            inter += pv.data[i] * gt.data[i];
            psum += pv.data[i];
            gsum += gt.data[i];
        }
        T A = T(2) * inter + eps;
        T B = psum + gsum + eps;
        int id = add_node(Tensor<T>::scalar(T(1) - A / B), true, {prob_fg});
        auto gt_copy = std::make_shared<Tensor<T>>(gt);
        nodes_[size_t(id)].backward = [this, id, prob_fg, gt_copy, A, B]() {
            T g = nodes_[size_t(id)].grad.data[0];
            const auto& pv = value(prob_fg);
            Tensor<T> dp = Tensor<T>::zeros(pv.shape);
            for (size_t i = 0; i < dp.size(); ++i) {
                dp.data[i] = -g * (T(2) * gt_copy->data[i] * B - A) / (B * B);
            }
            accumulate(prob_fg, dp);
        };
        return id;
    }

    // Scalar dot product with a constant coefficient field.
    int weighted_sum(int x, const Tensor<T>& coeffs) {
        const auto& xv = value(x);
        if (xv.size() != coeffs.size()) throw ShapeMismatch("weighted_sum: size mismatch");
        T acc = T(0);
        for (size_t i = 0; i < xv.size(); ++i) acc += coeffs.data[i] * xv.data[i];
        int id = add_node(Tensor<T>::scalar(acc), true, {x});
        auto c = std::make_shared<Tensor<T>>(coeffs);
        nodes_[size_t(id)].backward = [this, id, x, c]() {
            T g = nodes_[size_t(id)].grad.data[0];
            Tensor<T> dx(value(x).shape);
            for (size_t i = 0; i < dx.size(); ++i) dx.data[i] = g * c->data[i];
            accumulate(x, dx);
        };
        return id;
    }

    int sum(int x) {
        const auto& xv = value(x);
        T acc = T(0);
        for (T v : xv.data) acc += v;
        int id = add_node(Tensor<T>::scalar(acc), true, {x});
        nodes_[size_t(id)].backward = [this, id, x]() {
            T g = nodes_[size_t(id)].grad.data[0];
            Tensor<T> dx = Tensor<T>::full(value(x).shape, g);
            accumulate(x, dx);
        };
        return id;
    }

    // Scalar element selection (saliency root = one logit).
    int pick(int x, size_t flat_index) {
        const auto& xv = value(x);
        if (flat_index >= xv.size()) throw ShapeMismatch("pick: index out of range");
        int id = add_node(Tensor<T>::scalar(xv.data[flat_index]), true, {x});
        nodes_[size_t(id)].backward = [this, id, x, flat_index]() {
            Tensor<T> dx = Tensor<T>::zeros(value(x).shape);
            dx.data[flat_index] = nodes_[size_t(id)].grad.data[0];
            accumulate(x, dx);
        };
        return id;
    }

    // alpha*a + beta*b, elementwise over identical shapes.
    int axpby(int a, int b, T alpha, T beta) {
        const auto& av = value(a);
        const auto& bv = value(b);
        if (!av.same_shape(bv)) throw ShapeMismatch("axpby: shape mismatch");
        Tensor<T> out(av.shape);
        for (size_t i = 0; i < out.size(); ++i) {
            out.data[i] = alpha * av.data[i] + beta * bv.data[i];
        }
        int id = add_node(std::move(out), true, {a, b});
        nodes_[size_t(id)].backward = [this, id, a, b, alpha, beta]() {
            const Tensor<T>& g = nodes_[size_t(id)].grad;
            Tensor<T> da(g.shape), db(g.shape);
            for (size_t i = 0; i < g.size(); ++i) {
                da.data[i] = alpha * g.data[i];
                db.data[i] = beta * g.data[i];
            }
            accumulate(a, da);
            accumulate(b, db);
        };
        return id;
    }

    // --- backward pass ----------------------------------------------------

    void backward(int root) {
        if (value(root).size() != 1) throw NonScalarRoot("backward root must be scalar");
        grad(root).data[0] = T(1);
        for (int i = root; i >= 0; --i) {
            Node& n = nodes_[size_t(i)];
            if (n.grad.data.empty() || !n.backward) continue;
            n.backward();
            if (check_finite_ && !n.grad.all_finite()) {
                throw NonFiniteValue("non-finite gradient at node " + std::to_string(i));
            }
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void()> backward;
        bool needs_grad = false;
        std::vector<int> inputs;
    };

    int add_node(Tensor<T> value, bool needs_grad, std::vector<int> inputs) {
        if (check_finite_ && !value.all_finite()) {
            throw NonFiniteValue("non-finite value produced at node " +
                                 std::to_string(nodes_.size()));
        }
        nodes_.push_back(Node{std::move(value), {}, nullptr, needs_grad, std::move(inputs)});
        return int(nodes_.size()) - 1;
    }

    void accumulate(int id, const Tensor<T>& delta) {
        Tensor<T>& g = grad(id);
        for (size_t i = 0; i < g.size(); ++i) g.data[i] += delta.data[i];
    }

    std::vector<Node> nodes_;
    bool check_finite_;
};

// velocity <- momentum*velocity + grad; param <- param - lr*velocity
template <typename T>
void sgd_step(Tensor<T>& param, Tensor<T>& velocity, const Tensor<T>& grad, T lr,
              T momentum) {
    if (!param.same_shape(velocity) || param.size() != grad.size()) {
        throw ShapeMismatch("sgd_step: shape mismatch");
    }
    for (size_t i = 0; i < param.size(); ++i) {
        velocity.data[i] = momentum * velocity.data[i] + grad.data[i];
        param.data[i] -= lr * velocity.data[i];
    }
}

}  // namespace volseg
