#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "sll/errors.hpp"
#include "sll/matrix.hpp"
#include "sll/model.hpp"
#include "sll/rng.hpp"
#include "sll/svd.hpp"

namespace sll {

/// Leading singular subspace of a frozen backbone weight: U_k (out x k) and
/// V_k (in x k). Computed once before training and held fixed.
struct PretrainedSubspace {
    Matrix u_k;
    Matrix v_k;
    int k = 0;

    static PretrainedSubspace from_weight(const Matrix& w_pre, int k) {
        if (k < 1) throw std::invalid_argument("PretrainedSubspace: k must be >= 1");
        const SvdFactors f = svd_thin(w_pre);
        const int k_eff = std::min(k, static_cast<int>(f.sigma.size()));
        PretrainedSubspace sub;
        sub.k = k_eff;
        sub.u_k = Matrix(f.u.rows(), k_eff);
        sub.v_k = Matrix(f.v.rows(), k_eff);
        for (int i = 0; i < f.u.rows(); ++i) {
            for (int j = 0; j < k_eff; ++j) sub.u_k(i, j) = f.u(i, j);
        }
        for (int i = 0; i < f.v.rows(); ++i) {
            for (int j = 0; j < k_eff; ++j) sub.v_k(i, j) = f.v(i, j);
        }
        return sub;
    }
};

/// Alignment penalty ||U_k^T B||_F^2 + ||A V_k||_F^2: pushes the adapter
/// factors out of the backbone's dominant singular subspace.
inline double omega(const PretrainedSubspace& sub, const Matrix& a, const Matrix& b) {
    if (b.rows() != sub.u_k.rows()) throw std::invalid_argument("omega: B rows must match U_k");
    if (a.cols() != sub.v_k.rows()) throw std::invalid_argument("omega: A cols must match V_k");
    const Matrix ub = matmul(transpose(sub.u_k), b);
    const Matrix av = matmul(a, sub.v_k);
    const double fu = frobenius(ub);
    const double fv = frobenius(av);
    return fu * fu + fv * fv;
}

struct OmegaGrads {
    Matrix a; // 2 (A V_k) V_k^T
    Matrix b; // 2 U_k (U_k^T B)
};

inline OmegaGrads omega_grads(const PretrainedSubspace& sub, const Matrix& a, const Matrix& b) {
    if (b.rows() != sub.u_k.rows()) throw std::invalid_argument("omega_grads: B rows must match U_k");
    if (a.cols() != sub.v_k.rows()) throw std::invalid_argument("omega_grads: A cols must match V_k");
    OmegaGrads g;
    g.b = scaled(matmul(sub.u_k, matmul(transpose(sub.u_k), b)), 2.0);
    g.a = scaled(matmul(matmul(a, sub.v_k), transpose(sub.v_k)), 2.0);
    return g;
}

/// Which defense pieces are active: dropout on the frozen weights (cl), the
/// alignment penalty (tr), and post-training rescaling (pt).
struct LossConfig {
    double lambda = 0.0;
    double dropout_p = 0.0;
    int subspace_k = 32;
    bool cl = false;
    bool tr = false;
    bool pt = false;
};

struct ObjectiveResult {
    double loss = 0.0;       // supervised + lambda * sum_l omega_l
    double supervised = 0.0;
    double penalty = 0.0;    // sum_l omega_l, before lambda
    Gradients grads;
};

/// Loss and gradients for one step with explicit masks (empty = no dropout).
/// subspaces must hold one entry per layer when the penalty is active.
inline ObjectiveResult objective_with_masks(const ModelStack& stack, const Matrix& inputs,
                                            std::span<const int> labels,
                                            std::span<const std::size_t> batch,
                                            const LossConfig& cfg,
                                            std::span<const PretrainedSubspace> subspaces,
                                            std::span<const DropoutMask* const> masks) {
    const auto scales = train_scales(stack);
    ObjectiveResult res;
    const SupervisedResult sup =
        backward_supervised(stack, inputs, labels, batch, scales, masks);
    res.supervised = sup.loss;
    res.grads = sup.grads;

    const bool penalize = cfg.tr && cfg.lambda > 0.0 && stack.mode == Mode::lora;
    if (penalize) {
        if (subspaces.size() != stack.layers.size()) {
            throw std::invalid_argument("objective: one subspace per layer required");
        }
        for (std::size_t l = 0; l < stack.layers.size(); ++l) {
            const LoraLayer& layer = stack.layers[l];
            res.penalty += omega(subspaces[l], layer.a, layer.b);
            const OmegaGrads og = omega_grads(subspaces[l], layer.a, layer.b);
            LayerGrads& lg = res.grads.layers[l];
            lg.a = add_scaled(lg.a, og.a, cfg.lambda);
            lg.b = add_scaled(lg.b, og.b, cfg.lambda);
        }
    }
    res.loss = res.supervised + cfg.lambda * res.penalty;
    return res;
}

/// Training-step entry point: samples fresh dropout masks from `rng` when the
/// clean-strengthening piece is on, then delegates. Draws no randomness
/// otherwise, so disabled toggles leave the RNG stream untouched.
inline ObjectiveResult objective_step(const ModelStack& stack, const Matrix& inputs,
                                      std::span<const int> labels,
                                      std::span<const std::size_t> batch,
                                      const LossConfig& cfg,
                                      std::span<const PretrainedSubspace> subspaces,
                                      Rng& rng) {
    std::vector<DropoutMask> owned;
    std::vector<const DropoutMask*> masks;
    if (cfg.cl && cfg.dropout_p > 0.0 && stack.mode == Mode::lora) {
        owned.reserve(stack.layers.size());
        for (const auto& layer : stack.layers) {
            owned.push_back(sample_mask(rng, layer.w_pre.rows(), layer.w_pre.cols(), cfg.dropout_p));
        }
        for (const auto& m : owned) masks.push_back(&m);
    }
    return objective_with_masks(stack, inputs, labels, batch, cfg, subspaces, masks);
}

} // namespace sll
