#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sll/errors.hpp"
#include "sll/matrix.hpp"
#include "sll/rng.hpp"

namespace sll {

enum class Mode { frozen, fft, lora };

/// One linear layer with a low-rank adapter: W_eff = W_pre + s * B * A.
/// The training-time s is alpha / rank; a post-training rescale may pin a
/// different inference-time s.
struct LoraLayer {
    std::string name;
    Matrix w_pre; // out x in
    Matrix a;     // rank x in
    Matrix b;     // out x rank
    int rank = 1;
    double alpha = 1.0;
    std::optional<double> inference_scale;

    int out_dim() const { return w_pre.rows(); }
    int in_dim() const { return w_pre.cols(); }
    double train_scale() const { return alpha / rank; }
    double eval_scale() const { return inference_scale ? *inference_scale : train_scale(); }
    Matrix delta() const { return matmul(b, a); }
};

/// A ~ Gaussian(0, 1/rank), B = 0, so the adapter starts as an exact no-op.
inline LoraLayer make_layer(std::string name, Matrix w_pre, int rank, double alpha, Rng& rng) {
    if (rank < 1) throw std::invalid_argument("make_layer: rank must be >= 1");
    if (!(alpha > 0.0)) throw std::invalid_argument("make_layer: alpha must be positive");
    LoraLayer layer;
    layer.name = std::move(name);
    layer.rank = rank;
    layer.alpha = alpha;
    layer.a = gaussian_matrix(rng, rank, w_pre.cols(), 1.0 / std::sqrt(double(rank)));
    layer.b = Matrix(w_pre.rows(), rank);
    layer.w_pre = std::move(w_pre);
    return layer;
}

/// Layers applied in order with tanh between consecutive layers; the last
/// layer's output is the logit vector.
struct ModelStack {
    std::vector<LoraLayer> layers;
    Mode mode = Mode::lora;

    int in_dim() const { return layers.front().in_dim(); }
    int out_dim() const { return layers.back().out_dim(); }
};

/// Per-layer architecture knob: `layers == 1` is a linear classifier,
/// `layers == 2` a one-hidden-layer tanh MLP.
struct ArchSpec {
    int layers = 1;
    int hidden = 32;
    int rank = 4;
    double alpha = 16.0;
};

/// Fresh stack with Gaussian backbone init (std 1/sqrt(fan_in)) and no-op adapters.
inline ModelStack make_stack(const ArchSpec& arch, int in_dim, int classes, Mode mode, Rng& rng) {
    if (arch.layers != 1 && arch.layers != 2) {
        throw std::invalid_argument("make_stack: only 1- or 2-layer stacks supported");
    }
    if (arch.layers == 2 && arch.hidden < 2) {
        throw std::invalid_argument("make_stack: hidden width must be >= 2");
    }
    ModelStack stack;
    stack.mode = mode;
    auto backbone = [&rng](int out, int in) {
        return gaussian_matrix(rng, out, in, 1.0 / std::sqrt(double(in)));
    };
    if (arch.layers == 1) {
        stack.layers.push_back(make_layer("layer0", backbone(classes, in_dim), arch.rank, arch.alpha, rng));
    } else {
        stack.layers.push_back(make_layer("layer0", backbone(arch.hidden, in_dim), arch.rank, arch.alpha, rng));
        stack.layers.push_back(make_layer("layer1", backbone(classes, arch.hidden), arch.rank, arch.alpha, rng));
    }
    return stack;
}

/// Inverted-dropout mask over a frozen weight matrix: kept entries are scaled
/// by 1/(1-p) so the expected effective weight stays W_pre.
struct DropoutMask {
    Matrix mask; // entries 0 or 1
    double rate = 0.0;
    double inv_scale = 1.0;
};

inline DropoutMask sample_mask(Rng& rng, int rows, int cols, double p) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("sample_mask: p must be in [0, 1)");
    DropoutMask m;
    m.mask = Matrix(rows, cols);
    m.rate = p;
    m.inv_scale = 1.0 / (1.0 - p);
    auto data = m.mask.data();
    for (double& v : data) v = rng.next_double() < p ? 0.0 : 1.0;
    return m;
}

/// Effective weights for every layer, materialized once so a whole batch can
/// reuse them. masks may be empty (no dropout) or hold one entry per layer
/// (nullptr = no mask on that layer).
struct PreparedStack {
    std::vector<Matrix> weights;
};

inline PreparedStack prepare(const ModelStack& stack, std::span<const double> scales,
                             std::span<const DropoutMask* const> masks = {}) {
    if (scales.size() != stack.layers.size()) {
        throw std::invalid_argument("prepare: one scale per layer required");
    }
    if (!masks.empty() && masks.size() != stack.layers.size()) {
        throw std::invalid_argument("prepare: one mask slot per layer required");
    }
    PreparedStack prep;
    prep.weights.reserve(stack.layers.size());
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        const LoraLayer& layer = stack.layers[l];
        Matrix w = layer.w_pre;
        if (!masks.empty() && masks[l] != nullptr) {
            const DropoutMask& m = *masks[l];
            if (!m.mask.same_shape(w)) throw std::invalid_argument("prepare: mask shape mismatch");
            auto wd = w.data();
            auto md = m.mask.data();
            for (std::size_t i = 0; i < wd.size(); ++i) wd[i] *= md[i] * m.inv_scale;
        }
        if (stack.mode != Mode::fft) {
            w = add_scaled(w, layer.delta(), scales[l]);
        }
        prep.weights.push_back(std::move(w));
    }
    return prep;
}

inline std::vector<double> forward(const PreparedStack& prep, std::span<const double> x) {
    std::vector<double> h(x.begin(), x.end());
    for (std::size_t l = 0; l < prep.weights.size(); ++l) {
        h = matvec(prep.weights[l], h);
        if (l + 1 < prep.weights.size()) {
            for (double& v : h) v = std::tanh(v);
        }
    }
    return h;
}

inline std::vector<double> forward(const ModelStack& stack, std::span<const double> x,
                                   std::span<const double> scales,
                                   std::span<const DropoutMask* const> masks = {}) {
    return forward(prepare(stack, scales, masks), x);
}

/// Per-layer scale vector for inference: an explicit override applies to every
/// layer, otherwise each layer uses its own eval_scale.
inline std::vector<double> eval_scales(const ModelStack& stack, std::optional<double> s_override) {
    std::vector<double> scales;
    scales.reserve(stack.layers.size());
    for (const auto& layer : stack.layers) {
        scales.push_back(s_override ? *s_override : layer.eval_scale());
    }
    return scales;
}

inline std::vector<double> train_scales(const ModelStack& stack) {
    std::vector<double> scales;
    scales.reserve(stack.layers.size());
    for (const auto& layer : stack.layers) scales.push_back(layer.train_scale());
    return scales;
}

/// Argmax with first-index tie break.
inline int argmax(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("argmax: empty vector");
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i) {
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
}

inline int predict(const PreparedStack& prep, std::span<const double> x) {
    return argmax(forward(prep, x));
}

/// Numerically stable softmax cross-entropy.
inline double loss_ce(std::span<const double> logits, int y) {
    if (y < 0 || y >= static_cast<int>(logits.size())) {
        throw std::invalid_argument("loss_ce: label out of range");
    }
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    return mx + std::log(sum) - logits[static_cast<std::size_t>(y)];
}

/// d loss / d logits = softmax(logits) - onehot(y).
inline std::vector<double> grad_logits(std::span<const double> logits, int y) {
    if (y < 0 || y >= static_cast<int>(logits.size())) {
        throw std::invalid_argument("grad_logits: label out of range");
    }
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    std::vector<double> g(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        g[i] = std::exp(logits[i] - mx);
        sum += g[i];
    }
    for (double& v : g) v /= sum;
    g[static_cast<std::size_t>(y)] -= 1.0;
    return g;
}

/// Gradients for one layer; only the tensors trained in the active mode are
/// filled (adapters for lora, backbone for fft).
struct LayerGrads {
    Matrix a;
    Matrix b;
    Matrix w;
};

struct Gradients {
    std::vector<LayerGrads> layers;
};

inline Gradients zero_gradients(const ModelStack& stack) {
    Gradients g;
    g.layers.reserve(stack.layers.size());
    for (const auto& layer : stack.layers) {
        LayerGrads lg;
        if (stack.mode == Mode::lora) {
            lg.a = Matrix(layer.a.rows(), layer.a.cols());
            lg.b = Matrix(layer.b.rows(), layer.b.cols());
        } else if (stack.mode == Mode::fft) {
            lg.w = Matrix(layer.w_pre.rows(), layer.w_pre.cols());
        }
        g.layers.push_back(std::move(lg));
    }
    return g;
}

struct SupervisedResult {
    double loss = 0.0;
    Gradients grads;
};

/// Mean cross-entropy over the batch plus analytic gradients. Backprop runs
/// against the prepared (masked) effective weights; adapter gradients are
/// dB += s * dy (A x)^T and dA += s * (B^T dy) x^T per sample, averaged.
inline SupervisedResult backward_supervised(const ModelStack& stack, const Matrix& inputs,
                                            std::span<const int> labels,
                                            std::span<const std::size_t> batch,
                                            std::span<const double> scales,
                                            std::span<const DropoutMask* const> masks = {}) {
    if (inputs.rows() != static_cast<int>(labels.size())) {
        throw std::invalid_argument("backward_supervised: inputs/labels length mismatch");
    }
    if (batch.empty()) throw std::invalid_argument("backward_supervised: empty batch");
    if (stack.mode == Mode::frozen) {
        throw std::invalid_argument("backward_supervised: frozen stacks have no trainable tensors");
    }
    const PreparedStack prep = prepare(stack, scales, masks);
    const std::size_t n_layers = stack.layers.size();

    SupervisedResult res;
    res.grads = zero_gradients(stack);

    std::vector<std::vector<double>> acts(n_layers + 1); // acts[l] = input to layer l
    for (std::size_t idx : batch) {
        if (idx >= static_cast<std::size_t>(inputs.rows())) {
            throw std::invalid_argument("backward_supervised: batch index out of range");
        }
        auto x = inputs.row(static_cast<int>(idx));
        acts[0].assign(x.begin(), x.end());
        for (std::size_t l = 0; l < n_layers; ++l) {
            acts[l + 1] = matvec(prep.weights[l], acts[l]);
            if (l + 1 < n_layers) {
                for (double& v : acts[l + 1]) v = std::tanh(v);
            }
        }
        const int y = labels[idx];
        res.loss += loss_ce(acts[n_layers], y);

        std::vector<double> dy = grad_logits(acts[n_layers], y);
        for (std::size_t l = n_layers; l-- > 0;) {
            LayerGrads& lg = res.grads.layers[l];
            if (stack.mode == Mode::lora) {
                const LoraLayer& layer = stack.layers[l];
                const auto ax = matvec(layer.a, acts[l]);
                add_outer(lg.b, dy, ax, scales[l]);
                const auto bt_dy = matvec_t(layer.b, dy);
                add_outer(lg.a, bt_dy, acts[l], scales[l]);
            } else {
                add_outer(lg.w, dy, acts[l], 1.0);
            }
            if (l > 0) {
                std::vector<double> dh = matvec_t(prep.weights[l], dy);
                for (std::size_t i = 0; i < dh.size(); ++i) {
                    dh[i] *= 1.0 - acts[l][i] * acts[l][i]; // tanh'
                }
                dy = std::move(dh);
            }
        }
    }

    const double inv = 1.0 / double(batch.size());
    res.loss *= inv;
    for (auto& lg : res.grads.layers) {
        for (Matrix* m : {&lg.a, &lg.b, &lg.w}) {
            if (m->rows() == 0) continue;
            auto d = m->data();
            for (double& v : d) v *= inv;
        }
    }
    return res;
}

} // namespace sll
