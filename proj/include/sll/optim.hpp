#pragma once

#include <cmath>
#include <vector>

#include "sll/errors.hpp"
#include "sll/matrix.hpp"

namespace sll {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay and bias correction:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {
        if (!(cfg.lr > 0.0)) throw std::invalid_argument("AdamW: lr must be positive");
        if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0) {
            throw std::invalid_argument("AdamW: betas must be in [0, 1)");
        }
        if (cfg.weight_decay < 0.0) throw std::invalid_argument("AdamW: negative weight decay");
    }

    /// One update over a fixed parameter list. The list's length and shapes
    /// must not change between calls. lr_scale multiplies the learning rate
    /// (warmup); decay is scaled the same way.
    void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
              double lr_scale = 1.0) {
        if (params.size() != grads.size()) {
            throw std::invalid_argument("AdamW::step: params/grads length mismatch");
        }
        if (m_.empty()) {
            for (const Matrix* p : params) {
                m_.emplace_back(p->rows(), p->cols());
                v_.emplace_back(p->rows(), p->cols());
            }
        } else if (m_.size() != params.size()) {
            throw std::invalid_argument("AdamW::step: parameter list changed between steps");
        }
        ++t_;
        const double lr = cfg_.lr * lr_scale;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Matrix& p = *params[i];
            const Matrix& g = *grads[i];
            if (!p.same_shape(g) || !p.same_shape(m_[i])) {
                throw std::invalid_argument("AdamW::step: shape mismatch");
            }
            if (!g.all_finite()) throw NumericError("AdamW::step: non-finite gradient");
            auto pd = p.data();
            auto gd = g.data();
            auto md = m_[i].data();
            auto vd = v_[i].data();
            for (std::size_t j = 0; j < pd.size(); ++j) {
                md[j] = cfg_.beta1 * md[j] + (1.0 - cfg_.beta1) * gd[j];
                vd[j] = cfg_.beta2 * vd[j] + (1.0 - cfg_.beta2) * gd[j] * gd[j];
                const double m_hat = md[j] / bc1;
                const double v_hat = vd[j] / bc2;
                pd[j] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * pd[j]);
            }
        }
    }

    long step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    AdamWConfig cfg_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    long t_ = 0;
};

} // namespace sll
