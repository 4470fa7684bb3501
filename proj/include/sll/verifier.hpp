#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sll/dataset.hpp"
#include "sll/errors.hpp"
#include "sll/matrix.hpp"
#include "sll/rng.hpp"
#include "sll/spectral.hpp"

namespace sll {

/// Randomized stress test of the scaling-threshold claim: draw linear
/// classifiers with a planted backdoor and a planted clean-aligned adapter,
/// keep the instances whose tight constants satisfy the hypotheses, and check
/// the margin at every scale above the predicted threshold.
struct TrialConfig {
    int instances = 1000; // valid instances to accumulate
    int max_classes = 8;
    int max_dim = 32;
    std::uint64_t seed = 2026;
    std::vector<double> s_multipliers{1.01, 1.1, 2.0, 10.0};
    double slack = 1e-9;
    bool keep_records = false;
};

struct TrialRecord {
    long index = 0;
    int classes = 0;
    int dim = 0;
    int y = 0;
    int y_bd = 0;
    RhoReport rhos;
    double s_star = 0.0;
    double min_margin_above = 0.0; // min M_s over grid points s > s*
    double margin_at_zero = 0.0;   // backbone-only margin, negative when the backdoor fires
    bool early_positive = false;   // margin already positive at s = 0.5 s*
};

struct TrialSummary {
    long attempted = 0;
    long valid = 0;
    long margin_violations = 0;   // M_s <= -slack at some grid s > s*
    long chain_violations = 0;    // either inequality link failed by more than slack
    long early_positive = 0;      // threshold not tight for this instance (allowed)
    double worst_margin = 0.0;    // most negative margin seen above threshold
    std::vector<double> s_star_values;
    std::vector<TrialRecord> records;

    double s_star_quantile(double q) const {
        if (s_star_values.empty()) throw std::invalid_argument("s_star_quantile: no data");
        std::vector<double> sorted = s_star_values;
        std::sort(sorted.begin(), sorted.end());
        const double pos = q * double(sorted.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
        const double frac = pos - double(lo);
        return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
    }
};

namespace detail {

struct TrialInstance {
    Matrix w_pre;
    Matrix delta;
    std::vector<double> x;
    std::vector<double> x_trig;
    int classes = 0;
    int dim = 0;
    int y = 0;
    int y_bd = 0;
};

/// One candidate instance. Backbone gets a rank-one backdoor plant pushing
/// x_trig toward y_bd; the adapter gets a rank-one clean plant pushing x
/// toward y. A quarter of the candidates skip the plants entirely so the
/// filter also sees unstructured draws.
inline TrialInstance draw_trial_instance(Rng& rng, int max_classes, int max_dim) {
    TrialInstance inst;
    inst.classes = 2 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_classes - 1)));
    inst.dim = 2 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_dim - 1)));
    inst.y = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(inst.classes)));
    inst.y_bd = (inst.y + 1 +
                 static_cast<int>(rng.next_below(static_cast<std::uint64_t>(inst.classes - 1)))) %
                inst.classes;

    inst.x = random_unit(rng, inst.dim);
    const std::vector<double> t = random_unit(rng, inst.dim);
    const double tau = 0.3 + 0.9 * rng.next_double();
    std::vector<double> xt(inst.x);
    for (int i = 0; i < inst.dim; ++i) xt[static_cast<std::size_t>(i)] += tau * t[static_cast<std::size_t>(i)];
    const double n = norm2(xt);
    if (n < 1e-9) return draw_trial_instance(rng, max_classes, max_dim);
    for (double& v : xt) v /= n;
    inst.x_trig = std::move(xt);

    inst.w_pre = gaussian_matrix(rng, inst.classes, inst.dim, 1.0);
    inst.delta = gaussian_matrix(rng, inst.classes, inst.dim, 0.3);
    const bool planted = rng.next_below(4) != 0;
    if (planted) {
        const double k_bd = 1.0 + 3.0 * rng.next_double();
        const double k_cl = 1.0 + 3.0 * rng.next_double();
        for (int j = 0; j < inst.dim; ++j) {
            inst.w_pre(inst.y_bd, j) += k_bd * inst.x_trig[static_cast<std::size_t>(j)];
            inst.w_pre(inst.y, j) -= k_bd * inst.x_trig[static_cast<std::size_t>(j)];
            inst.delta(inst.y, j) += k_cl * inst.x[static_cast<std::size_t>(j)];
            inst.delta(inst.y_bd, j) -= k_cl * inst.x[static_cast<std::size_t>(j)];
        }
    }
    return inst;
}

} // namespace detail

inline TrialSummary run_proposition_trials(const TrialConfig& cfg) {
    if (cfg.instances < 1) throw std::invalid_argument("run_proposition_trials: instances must be >= 1");
    if (cfg.max_classes < 2 || cfg.max_dim < 2) {
        throw std::invalid_argument("run_proposition_trials: need max_classes and max_dim >= 2");
    }
    TrialSummary summary;
    const long attempt_cap = 200L * cfg.instances;
    Rng root(cfg.seed);
    for (long attempt = 0; summary.valid < cfg.instances; ++attempt) {
        if (attempt >= attempt_cap) {
            throw NumericError("run_proposition_trials: valid-instance yield too low");
        }
        ++summary.attempted;
        Rng rng = root.child(static_cast<std::uint64_t>(attempt));
        const auto inst = detail::draw_trial_instance(rng, cfg.max_classes, cfg.max_dim);

        const RhoReport rhos =
            estimate_rhos(inst.w_pre, inst.delta, inst.x, inst.x_trig, inst.y, inst.y_bd);
        if (!rhos.backdoor_active || !rhos.s_star.has_value()) continue;
        ++summary.valid;

        const double s_star = *rhos.s_star;
        std::vector<double> grid;
        grid.reserve(cfg.s_multipliers.size());
        for (double m : cfg.s_multipliers) grid.push_back(m * s_star);
        const PropositionCheck check = verify_proposition(
            inst.w_pre, inst.delta, inst.x, inst.x_trig, inst.y, inst.y_bd, grid, cfg.slack);

        if (!check.margins_positive) ++summary.margin_violations;
        if (!check.chain_delta_holds || !check.chain_backbone_holds) ++summary.chain_violations;

        double min_margin = check.margins.front().second;
        for (const auto& [s, m] : check.margins) min_margin = std::min(min_margin, m);
        summary.worst_margin = std::min(summary.worst_margin, min_margin);
        summary.s_star_values.push_back(s_star);

        const double early =
            triggered_margin(inst.w_pre, inst.delta, 0.5 * s_star, inst.x_trig, inst.y, inst.y_bd);
        if (early > 0.0) ++summary.early_positive;

        if (cfg.keep_records) {
            TrialRecord rec;
            rec.index = attempt;
            rec.classes = inst.classes;
            rec.dim = inst.dim;
            rec.y = inst.y;
            rec.y_bd = inst.y_bd;
            rec.rhos = rhos;
            rec.s_star = s_star;
            rec.min_margin_above = min_margin;
            rec.margin_at_zero =
                triggered_margin(inst.w_pre, inst.delta, 0.0, inst.x_trig, inst.y, inst.y_bd);
            rec.early_positive = early > 0.0;
            summary.records.push_back(std::move(rec));
        }
    }
    return summary;
}

} // namespace sll
