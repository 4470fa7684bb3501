#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "sll/errors.hpp"
#include "sll/matrix.hpp"
#include "sll/rng.hpp"

namespace sll {

/// Synthetic classification task: unit-norm class means in R^d plus isotropic
/// Gaussian feature noise. Every emitted input is l2-normalized.
struct TaskSpec {
    int dim = 0;
    int classes = 0;
    std::vector<std::vector<double>> class_means; // one unit vector per class
    double noise_std = 0.0;
    std::uint64_t seed = 0;
};

/// Additive feature-space trigger: unit direction, strength, and the label the
/// backdoor should force.
struct TriggerSpec {
    std::vector<double> direction;
    double strength = 0.0;
    int target_label = 0;
};

struct Dataset {
    Matrix inputs; // n x d, rows unit-norm
    std::vector<int> labels;
    std::vector<std::uint8_t> poisoned;

    int n() const { return inputs.rows(); }
    int dim() const { return inputs.cols(); }
};

namespace detail {

inline std::vector<double> random_unit(Rng& rng, int dim) {
    std::vector<double> v(static_cast<std::size_t>(dim));
    double n = 0.0;
    while (n == 0.0) {
        for (double& x : v) x = rng.next_gaussian();
        n = norm2(v);
    }
    for (double& x : v) x /= n;
    return v;
}

// Unit vector orthogonal to every vector in `against` (Gram-Schmidt, two passes).
inline std::vector<double> random_unit_orthogonal(Rng& rng,
                                                  const std::vector<std::vector<double>>& against,
                                                  int dim) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        std::vector<double> v = random_unit(rng, dim);
        // orthonormalize the span of `against` on the fly
        std::vector<std::vector<double>> basis;
        for (const auto& a : against) {
            std::vector<double> w = a;
            for (const auto& b : basis) {
                const double p = dot(w, b);
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= p * b[i];
            }
            const double wn = norm2(w);
            if (wn > 1e-12) {
                for (double& x : w) x /= wn;
                basis.push_back(std::move(w));
            }
        }
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& b : basis) {
                const double p = dot(v, b);
                for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * b[i];
            }
        }
        const double vn = norm2(v);
        if (vn > 1e-6) {
            for (double& x : v) x /= vn;
            return v;
        }
    }
    throw NumericError("random_unit_orthogonal: no direction left orthogonal to the span");
}

} // namespace detail

/// Task with randomly drawn, pairwise-distinct unit class means.
inline TaskSpec make_task(int dim, int classes, double noise_std, std::uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("make_task: need at least 2 classes");
    if (dim < 2) throw std::invalid_argument("make_task: need dim >= 2");
    if (noise_std < 0.0) throw std::invalid_argument("make_task: negative noise_std");
    TaskSpec task{dim, classes, {}, noise_std, seed};
    Rng rng = Rng(seed).child(0x7a51);
    while (static_cast<int>(task.class_means.size()) < classes) {
        auto mean = detail::random_unit(rng, dim);
        bool distinct = true;
        for (const auto& other : task.class_means) {
            if (std::abs(dot(mean, other)) > 1.0 - 1e-9) distinct = false;
        }
        if (distinct) task.class_means.push_back(std::move(mean));
    }
    return task;
}

/// Trigger direction with a controlled footprint on the target class's clean
/// features. At overlap = 0 the trigger is orthogonal to every class mean and
/// carries no class signal of its own. overlap in (0, 1) tilts it toward the
/// target class mean, the feature-collision geometry of clean-label attacks:
/// models trained on clean data then read the trigger as genuine target-class
/// evidence. cos(t, mean[y_bd]) = overlap up to the means' mutual overlaps.
inline TriggerSpec make_trigger(const TaskSpec& task, double strength, int target_label,
                                std::uint64_t seed, double overlap = 0.0) {
    if (!(strength > 0.0)) throw std::invalid_argument("make_trigger: strength must be positive");
    if (target_label < 0 || target_label >= task.classes) {
        throw std::invalid_argument("make_trigger: target label out of range");
    }
    if (overlap < 0.0 || overlap >= 1.0) {
        throw std::invalid_argument("make_trigger: overlap must lie in [0, 1)");
    }
    Rng rng = Rng(seed).child(0x7516);
    std::vector<double> t = detail::random_unit_orthogonal(rng, task.class_means, task.dim);
    if (overlap > 0.0) {
        const auto& target_mean = task.class_means[static_cast<std::size_t>(target_label)];
        const double ortho = std::sqrt(1.0 - overlap * overlap);
        for (std::size_t i = 0; i < t.size(); ++i) {
            t[i] = ortho * t[i] + overlap * target_mean[i];
        }
        const double tn = norm2(t);
        for (double& x : t) x /= tn;
    }
    return TriggerSpec{std::move(t), strength, target_label};
}

namespace detail {

inline void fill_clean_row(const TaskSpec& task, int y, std::span<double> row, Rng& rng) {
    const auto& mean = task.class_means[static_cast<std::size_t>(y)];
    if (task.noise_std == 0.0) {
        for (int j = 0; j < task.dim; ++j) row[static_cast<std::size_t>(j)] = mean[static_cast<std::size_t>(j)];
        return;
    }
    double norm = 0.0;
    while (norm == 0.0) { // resample a degenerate zero vector, never emit it
        for (int j = 0; j < task.dim; ++j) {
            row[static_cast<std::size_t>(j)] =
                mean[static_cast<std::size_t>(j)] + task.noise_std * rng.next_gaussian();
        }
        norm = norm2(row);
    }
    for (int j = 0; j < task.dim; ++j) row[static_cast<std::size_t>(j)] /= norm;
}

} // namespace detail

/// Clean samples: normalize(class_mean[y] + noise), labels assigned round-robin.
inline Dataset sample_clean(const TaskSpec& task, int n, Rng& rng) {
    if (n < 1) throw std::invalid_argument("sample_clean: n must be >= 1");
    Dataset ds;
    ds.inputs = Matrix(n, task.dim);
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.poisoned.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        const int y = i % task.classes;
        ds.labels[static_cast<std::size_t>(i)] = y;
        detail::fill_clean_row(task, y, ds.inputs.row(i), rng);
    }
    return ds;
}

/// Clean samples drawn from a single class. Appended to a round-robin corpus
/// this tilts the class priors, which fattens that class's row of a trained
/// weight matrix and so pins the matrix's top singular pair onto it.
inline Dataset sample_class(const TaskSpec& task, int label, int n, Rng& rng) {
    if (n < 1) throw std::invalid_argument("sample_class: n must be >= 1");
    if (label < 0 || label >= task.classes) {
        throw std::invalid_argument("sample_class: label out of range");
    }
    Dataset ds;
    ds.inputs = Matrix(n, task.dim);
    ds.labels.assign(static_cast<std::size_t>(n), label);
    ds.poisoned.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) detail::fill_clean_row(task, label, ds.inputs.row(i), rng);
    return ds;
}

/// Concatenate the rows of `extra` onto `base`. Dimensions must agree.
inline void append_rows(Dataset& base, const Dataset& extra) {
    if (base.dim() != extra.dim()) {
        throw std::invalid_argument("append_rows: dimension mismatch");
    }
    Matrix joined(base.n() + extra.n(), base.dim());
    std::copy(base.inputs.data().begin(), base.inputs.data().end(), joined.data().begin());
    std::copy(extra.inputs.data().begin(), extra.inputs.data().end(),
              joined.data().begin() + base.inputs.size());
    base.inputs = std::move(joined);
    base.labels.insert(base.labels.end(), extra.labels.begin(), extra.labels.end());
    base.poisoned.insert(base.poisoned.end(), extra.poisoned.begin(), extra.poisoned.end());
}

/// normalize(x + tau * t). tau = 0 returns x unchanged.
inline std::vector<double> apply_trigger(std::span<const double> x, const TriggerSpec& trig) {
    if (x.size() != trig.direction.size()) {
        throw std::invalid_argument("apply_trigger: dimension mismatch");
    }
    std::vector<double> out(x.begin(), x.end());
    if (trig.strength == 0.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += trig.strength * trig.direction[i];
    const double n = norm2(out);
    if (n < 1e-12) {
        throw std::invalid_argument("apply_trigger: trigger cancels the input (anti-parallel)");
    }
    for (double& v : out) v /= n;
    return out;
}

/// Apply the trigger to n_poison rows. Clean-label mode triggers only rows
/// already labeled with the target class and never touches labels; otherwise
/// triggered rows are relabeled to the target.
inline Dataset poison(const Dataset& clean, const TriggerSpec& trig, int n_poison,
                      bool clean_label) {
    if (n_poison < 0 || n_poison > clean.n()) {
        throw std::invalid_argument("poison: n_poison out of range");
    }
    Dataset out = clean;
    int remaining = n_poison;
    for (int i = 0; i < out.n() && remaining > 0; ++i) {
        if (clean_label && out.labels[static_cast<std::size_t>(i)] != trig.target_label) continue;
        const auto triggered = apply_trigger(out.inputs.row(i), trig);
        auto row = out.inputs.row(i);
        for (std::size_t j = 0; j < triggered.size(); ++j) row[j] = triggered[j];
        if (!clean_label) out.labels[static_cast<std::size_t>(i)] = trig.target_label;
        out.poisoned[static_cast<std::size_t>(i)] = 1;
        --remaining;
    }
    if (remaining > 0) {
        throw std::invalid_argument("poison: fewer than n_poison rows of the target class available");
    }
    return out;
}

/// Rotate each class mean by an angle proportional to `shift` toward a random
/// orthogonal direction, modeling the proxy-vs-target distribution gap.
inline TaskSpec proxy_shift(const TaskSpec& spec, double shift, Rng& rng) {
    if (shift < 0.0 || shift >= 1.0) throw std::invalid_argument("proxy_shift: shift must be in [0, 1)");
    TaskSpec out = spec;
    out.seed = rng.next_u64();
    if (shift == 0.0) return out;
    const double angle = shift * 1.5707963267948966; // shift of 1 would be a quarter turn
    const double c = std::cos(angle), s = std::sin(angle);
    for (auto& mean : out.class_means) {
        std::vector<double> w = detail::random_unit_orthogonal(rng, {mean}, spec.dim);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = c * mean[i] + s * w[i];
    }
    return out;
}

// ---- CSV export/import ------------------------------------------------------
// Header: x_0,...,x_{d-1},label,poisoned

namespace detail {
inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
} // namespace detail

inline void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("write_dataset_csv: cannot open " + path.string());
    for (int j = 0; j < ds.dim(); ++j) out << "x_" << j << ",";
    out << "label,poisoned\n";
    for (int i = 0; i < ds.n(); ++i) {
        auto row = ds.inputs.row(i);
        for (int j = 0; j < ds.dim(); ++j) out << detail::fmt_g17(row[static_cast<std::size_t>(j)]) << ",";
        out << ds.labels[static_cast<std::size_t>(i)] << ","
            << int(ds.poisoned[static_cast<std::size_t>(i)]) << "\n";
    }
}

inline Dataset read_dataset_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("read_dataset_csv: cannot open " + path.string());
    std::string header;
    if (!std::getline(in, header)) throw ConfigError("read_dataset_csv: empty file");
    int dim = 0;
    for (std::size_t pos = 0; (pos = header.find("x_", pos)) != std::string::npos; ++pos) ++dim;
    if (dim == 0) throw ConfigError("read_dataset_csv: malformed header");

    std::vector<double> values;
    std::vector<int> labels;
    std::vector<std::uint8_t> poisoned;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t start = 0;
        std::vector<std::string> cells;
        while (true) {
            const std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (static_cast<int>(cells.size()) != dim + 2) {
            throw ConfigError("read_dataset_csv: wrong cell count in row");
        }
        for (int j = 0; j < dim; ++j) values.push_back(std::stod(cells[static_cast<std::size_t>(j)]));
        labels.push_back(std::stoi(cells[static_cast<std::size_t>(dim)]));
        poisoned.push_back(static_cast<std::uint8_t>(std::stoi(cells[static_cast<std::size_t>(dim) + 1])));
    }
    if (labels.empty()) throw ConfigError("read_dataset_csv: no data rows");

    Dataset ds;
    ds.inputs = Matrix(static_cast<int>(labels.size()), dim);
    std::copy(values.begin(), values.end(), ds.inputs.data().begin());
    ds.labels = std::move(labels);
    ds.poisoned = std::move(poisoned);
    return ds;
}

} // namespace sll
