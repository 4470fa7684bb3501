#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sll/errors.hpp"
#include "sll/matrix.hpp"
#include "sll/model.hpp"
#include "sll/svd.hpp"

namespace sll {

/// Which layers a post-training operation touches: none, the last n (closest
/// to the output), or all of them.
struct LayerSelector {
    enum class Kind { none, top_n, all };
    Kind kind = Kind::all;
    int n = 0;

    static LayerSelector parse(const std::string& text) {
        if (text == "none") return {Kind::none, 0};
        if (text == "all") return {Kind::all, 0};
        if (text.size() > 3 && text.substr(0, 3) == "top") {
            const int n = std::stoi(text.substr(3));
            if (n < 1) throw ConfigError("layer selector: top count must be >= 1");
            return {Kind::top_n, n};
        }
        throw ConfigError("layer selector: expected none | topN | all, got '" + text + "'");
    }

    bool selects(int layer_idx, int n_layers) const {
        switch (kind) {
            case Kind::none: return false;
            case Kind::all: return true;
            case Kind::top_n: return layer_idx >= n_layers - n;
        }
        return false;
    }

    std::string to_string() const {
        switch (kind) {
            case Kind::none: return "none";
            case Kind::all: return "all";
            case Kind::top_n: return "top" + std::to_string(n);
        }
        return "none";
    }
};

/// Scale that matches the adapter's spectral energy to the backbone's:
/// s = sigma_max(W_pre) / sigma_max(Delta W).
inline double rescale(const LoraLayer& layer) {
    const Matrix delta = layer.delta();
    if (delta.all_zero()) {
        throw NumericError("rescale: untrained adapter (Delta W = 0), rescale undefined");
    }
    const double sigma_pre = sigma_max(layer.w_pre);
    const double sigma_delta = sigma_max(delta);
    return sigma_pre / sigma_delta;
}

/// Pins the inference-time scale of the selected layers to the rescaled value;
/// unselected layers keep whatever they had.
inline void apply_rescale(ModelStack& stack, const LayerSelector& sel) {
    const int n_layers = static_cast<int>(stack.layers.size());
    for (int l = 0; l < n_layers; ++l) {
        if (!sel.selects(l, n_layers)) continue;
        stack.layers[l].inference_scale = rescale(stack.layers[l]);
    }
}

/// Per-layer spectral diagnostics. max_cosine is the alignment between the
/// adapter's dominant left singular direction and the backbone's top-k left
/// singular subspace; ratio is sigma_pre / sigma_delta. Untrained adapters
/// are flagged degenerate and report zero for both.
struct SpectralRow {
    std::string layer;
    double sigma_pre = 0.0;
    double sigma_delta = 0.0;
    double ratio = 0.0;
    double max_cosine = 0.0;
    bool degenerate = false;
};

inline std::vector<SpectralRow> spectral_report(const ModelStack& stack, int k) {
    if (k < 1) throw std::invalid_argument("spectral_report: k must be >= 1");
    std::vector<SpectralRow> rows;
    rows.reserve(stack.layers.size());
    for (const auto& layer : stack.layers) {
        SpectralRow row;
        row.layer = layer.name;
        row.sigma_pre = sigma_max(layer.w_pre);
        const Matrix delta = layer.delta();
        if (delta.all_zero()) {
            row.degenerate = true;
            rows.push_back(std::move(row));
            continue;
        }
        const SvdFactors df = svd_thin(delta);
        row.sigma_delta = df.sigma[0];
        row.ratio = row.sigma_pre / row.sigma_delta;
        const SvdFactors pf = svd_thin(layer.w_pre);
        const int k_eff = std::min(k, static_cast<int>(pf.sigma.size()));
        Matrix basis(pf.u.rows(), k_eff);
        for (int i = 0; i < pf.u.rows(); ++i) {
            for (int j = 0; j < k_eff; ++j) basis(i, j) = pf.u(i, j);
        }
        std::vector<double> lead(static_cast<std::size_t>(df.u.rows()));
        for (int i = 0; i < df.u.rows(); ++i) lead[static_cast<std::size_t>(i)] = df.u(i, 0);
        row.max_cosine = max_abs_cosine(lead, basis);
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- margin analysis for a single linear classifier -------------------------

namespace detail {

// <e_y - e_ybd, M x>
inline double margin_inner(const Matrix& m, std::span<const double> x, int y, int y_bd) {
    const auto mx = matvec(m, x);
    return mx[static_cast<std::size_t>(y)] - mx[static_cast<std::size_t>(y_bd)];
}

} // namespace detail

/// Margin of the true class over the backdoor class on a triggered input at
/// adapter scale s: <e_y - e_ybd, (W_pre + s Delta) x_trig>.
inline double triggered_margin(const Matrix& w_pre, const Matrix& delta, double s,
                               std::span<const double> x_trig, int y, int y_bd) {
    return detail::margin_inner(w_pre, x_trig, y, y_bd) +
           s * detail::margin_inner(delta, x_trig, y, y_bd);
}

/// Tight alignment constants for one (clean input, triggered input) pair under
/// a linear classifier. All three are defined so that equality holds when the
/// constants are substituted back into their defining inequalities.
struct RhoReport {
    double rho_bd = 0.0;  // backbone backdoor strength: -<c, W_pre x_trig> / (|c| sigma_pre)
    double rho_cl = 0.0;  // adapter clean alignment:     <c, Delta x> / (|c| sigma_delta)
    double rho_tr = 0.0;  // adapter trigger sensitivity: |<c, Delta (x_trig - x)>| / (|c| sigma_delta)
    double rho_eff = 0.0; // rho_cl - rho_tr
    double c_norm = 0.0;
    double sigma_pre = 0.0;
    double sigma_delta = 0.0;
    bool backdoor_active = false; // rho_bd > 0: the backbone flips this pair
    std::optional<double> s_star; // defined when rho_eff > 0 and sigma_delta > 0
};

/// Threshold scale: s* = (rho_bd / rho_eff) * (sigma_pre / sigma_delta).
inline double scaling_threshold(double rho_bd, double rho_eff, double sigma_pre,
                                double sigma_delta) {
    if (!(rho_eff > 0.0)) throw std::invalid_argument("scaling_threshold: rho_eff must be positive");
    if (!(sigma_delta > 0.0)) throw std::invalid_argument("scaling_threshold: sigma_delta must be positive");
    return (rho_bd / rho_eff) * (sigma_pre / sigma_delta);
}

inline RhoReport estimate_rhos(const Matrix& w_pre, const Matrix& delta,
                               std::span<const double> x, std::span<const double> x_trig,
                               int y, int y_bd) {
    const int classes = w_pre.rows();
    if (y < 0 || y >= classes || y_bd < 0 || y_bd >= classes) {
        throw std::invalid_argument("estimate_rhos: label out of range");
    }
    if (y == y_bd) throw std::invalid_argument("estimate_rhos: y and y_bd must differ");
    if (!w_pre.same_shape(delta)) throw std::invalid_argument("estimate_rhos: shape mismatch");
    if (std::abs(norm2(x) - 1.0) > 1e-6 || std::abs(norm2(x_trig) - 1.0) > 1e-6) {
        throw std::invalid_argument("estimate_rhos: inputs must be unit-norm");
    }
    if (w_pre.all_zero()) throw std::invalid_argument("estimate_rhos: zero backbone");

    RhoReport r;
    r.c_norm = std::sqrt(2.0);
    r.sigma_pre = sigma_max(w_pre);
    r.sigma_delta = delta.all_zero() ? 0.0 : sigma_max(delta);

    r.rho_bd = -detail::margin_inner(w_pre, x_trig, y, y_bd) / (r.c_norm * r.sigma_pre);
    r.backdoor_active = r.rho_bd > 0.0;

    if (r.sigma_delta > 0.0) {
        const double denom = r.c_norm * r.sigma_delta;
        r.rho_cl = detail::margin_inner(delta, x, y, y_bd) / denom;
        std::vector<double> diff(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) diff[i] = x_trig[i] - x[i];
        r.rho_tr = std::abs(detail::margin_inner(delta, diff, y, y_bd)) / denom;
        r.rho_eff = r.rho_cl - r.rho_tr;
        if (r.rho_eff > 0.0) {
            r.s_star = scaling_threshold(r.rho_bd, r.rho_eff, r.sigma_pre, r.sigma_delta);
        }
    }
    return r;
}

/// Direct computational check of the threshold claim on one instance:
/// margins at every requested scale, plus the two inequality links the
/// threshold derivation rests on, evaluated with the tight constants.
struct PropositionCheck {
    bool applicable = false;     // rho_eff > 0 and the backbone backdoor fires
    double s_star = 0.0;
    bool margins_positive = true;    // M_s > -slack for every grid s > s*
    bool chain_delta_holds = true;   // <c, Delta x_trig> >= rho_eff |c| sigma_delta - slack
    bool chain_backbone_holds = true; // <c, W_pre x_trig> >= -rho_bd |c| sigma_pre - slack
    RhoReport rhos;
    std::vector<std::pair<double, double>> margins; // (s, M_s) over the grid
};

inline PropositionCheck verify_proposition(const Matrix& w_pre, const Matrix& delta,
                                           std::span<const double> x,
                                           std::span<const double> x_trig, int y, int y_bd,
                                           std::span<const double> s_grid, double slack = 1e-9) {
    PropositionCheck check;
    check.rhos = estimate_rhos(w_pre, delta, x, x_trig, y, y_bd);
    const RhoReport& r = check.rhos;
    check.applicable = r.backdoor_active && r.s_star.has_value();
    if (!check.applicable) return check;
    check.s_star = *r.s_star;

    const double delta_on_trig = detail::margin_inner(delta, x_trig, y, y_bd);
    if (delta_on_trig < r.rho_eff * r.c_norm * r.sigma_delta - slack) {
        check.chain_delta_holds = false;
    }
    const double pre_on_trig = detail::margin_inner(w_pre, x_trig, y, y_bd);
    if (pre_on_trig < -r.rho_bd * r.c_norm * r.sigma_pre - slack) {
        check.chain_backbone_holds = false;
    }

    for (double s : s_grid) {
        const double m = triggered_margin(w_pre, delta, s, x_trig, y, y_bd);
        check.margins.emplace_back(s, m);
        if (s > check.s_star && m <= -slack) check.margins_positive = false;
    }
    return check;
}

} // namespace sll
