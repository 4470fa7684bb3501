#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sll/dataset.hpp"
#include "sll/model.hpp"
#include "sll/objective.hpp"
#include "sll/spectral.hpp"
#include "sll/train.hpp"

namespace sll {

/// End-to-end experiment: poison a proxy task, pretrain a backbone on it until
/// the backdoor sticks, then fine-tune on clean target-task data with the
/// requested method and measure what survives.
struct PipelineConfig {
    int dim = 32;
    int classes = 2;
    double noise_std = 0.4;
    double shift = 0.3; // proxy-vs-target rotation of the class means
    double tau = 0.8;
    double trigger_overlap = 0.0; // trigger footprint on the class-mean span
    int target_label = 0;
    int n_train = 2000;       // clean target-task fine-tuning set
    int n_test = 1000;        // clean target-task test set
    int n_proxy_train = 2000; // poisoned pretraining set
    int n_proxy_test = 500;   // clean proxy holdout for the pretrain stop rule
    int n_poison = 150;
    int n_target_class_extra = 0; // extra clean pretrain rows of the trigger's target class
    double target_class_extra_noise = 1.0; // noise multiplier on those extra rows
    int n_tune_target_extra = 0; // same, for the fine-tuning set
    double tune_target_extra_noise = 1.0;
    bool clean_label = true;
    ArchSpec arch;
    TrainConfig pretrain{.lr = 2e-3, .epochs = 60, .min_epochs = 40};
    TrainConfig tune{.lr = 2e-4, .epochs = 30};
    double asr_target = 0.95;
    double pretrain_ca_floor = 0.8; // stop rule also demands this much holdout accuracy
    Method method = Method::lora;
    LossConfig loss;
    LayerSelector rescale_layers = LayerSelector{LayerSelector::Kind::all, 0};
    std::uint64_t seed = 1;
};

struct PipelineResult {
    TaskSpec task;
    TaskSpec proxy_task;
    TriggerSpec trigger;
    Dataset target_test;
    ModelStack pretrained;
    ModelStack tuned;
    Metrics pretrain_metrics; // on the clean target test set
    Metrics tuned_metrics;
};

namespace detail {

// Fixed stream tags: every pipeline stage draws from its own child of the
// master seed, so toggling one stage never perturbs another.
enum StageTag : std::uint64_t {
    kTagTask = 1,
    kTagTrigger = 2,
    kTagProxy = 3,
    kTagProxyTrain = 4,
    kTagProxyHoldout = 5,
    kTagTargetTrain = 6,
    kTagTargetTest = 7,
    kTagPretrainInit = 8,
    kTagPretrainLoop = 9,
    kTagFinetune = 10,
    kTagProxyExtra = 11,
    kTagTargetExtra = 12,
};

} // namespace detail

/// The datasets and trigger of a pipeline run, reusable across methods.
struct PipelineData {
    TaskSpec task;
    TaskSpec proxy_task;
    TriggerSpec trigger;
    Dataset proxy_poisoned;
    Dataset proxy_holdout;
    Dataset target_train;
    Dataset target_test;
};

inline PipelineData make_pipeline_data(const PipelineConfig& cfg) {
    Rng master(cfg.seed);
    PipelineData d;
    d.task = make_task(cfg.dim, cfg.classes, cfg.noise_std, master.child(detail::kTagTask).state());
    d.trigger = make_trigger(d.task, cfg.tau, cfg.target_label,
                             master.child(detail::kTagTrigger).state(), cfg.trigger_overlap);
    Rng proxy_rng = master.child(detail::kTagProxy);
    d.proxy_task = proxy_shift(d.task, cfg.shift, proxy_rng);

    Rng proxy_train_rng = master.child(detail::kTagProxyTrain);
    d.proxy_poisoned = poison(sample_clean(d.proxy_task, cfg.n_proxy_train, proxy_train_rng),
                              d.trigger, cfg.n_poison, cfg.clean_label);
    if (cfg.n_target_class_extra > 0) {
        // Extra (optionally noisier) rows make the target class harder, so the
        // backbone grows that class's template until it dominates the weight
        // spectrum. This anchors the top singular pair onto the target class,
        // giving subspace-based diagnostics and penalties a stable direction
        // instead of a seed-dependent one.
        TaskSpec hard = d.proxy_task;
        hard.noise_std *= cfg.target_class_extra_noise;
        Rng extra_rng = master.child(detail::kTagProxyExtra);
        append_rows(d.proxy_poisoned, sample_class(hard, cfg.target_label,
                                                   cfg.n_target_class_extra, extra_rng));
    }
    Rng holdout_rng = master.child(detail::kTagProxyHoldout);
    d.proxy_holdout = sample_clean(d.proxy_task, cfg.n_proxy_test, holdout_rng);
    Rng train_rng = master.child(detail::kTagTargetTrain);
    d.target_train = sample_clean(d.task, cfg.n_train, train_rng);
    if (cfg.n_tune_target_extra > 0) {
        // Mirrors the pretraining imbalance on the fine-tuning side so both
        // stages agree on which class is hard.
        TaskSpec hard = d.task;
        hard.noise_std *= cfg.tune_target_extra_noise;
        Rng extra_rng = master.child(detail::kTagTargetExtra);
        append_rows(d.target_train, sample_class(hard, cfg.target_label,
                                                 cfg.n_tune_target_extra, extra_rng));
    }
    Rng test_rng = master.child(detail::kTagTargetTest);
    d.target_test = sample_clean(d.task, cfg.n_test, test_rng);
    return d;
}

/// Backbone poisoning stage alone (shared by several CLI commands).
inline ModelStack run_pretrain(const PipelineConfig& cfg, const PipelineData& data) {
    Rng master(cfg.seed);
    Rng init_rng = master.child(detail::kTagPretrainInit);
    const ModelStack init = make_stack(cfg.arch, cfg.dim, cfg.classes, Mode::fft, init_rng);
    Rng loop_rng = master.child(detail::kTagPretrainLoop);
    return pretrain_poison(init, data.proxy_poisoned, data.proxy_holdout, data.trigger,
                           cfg.pretrain, cfg.asr_target, cfg.pretrain_ca_floor, loop_rng);
}

/// Fine-tuning stage alone. The stream tag does not depend on the method, so
/// method comparisons share every coin flip.
inline ModelStack run_finetune(const PipelineConfig& cfg, const PipelineData& data,
                               const ModelStack& pretrained) {
    Rng master(cfg.seed);
    Rng tune_rng = master.child(detail::kTagFinetune);
    return finetune(pretrained, data.target_train, cfg.method, cfg.loss, cfg.tune,
                    cfg.rescale_layers, tune_rng);
}

inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
    PipelineData data = make_pipeline_data(cfg);
    PipelineResult res;
    res.pretrained = run_pretrain(cfg, data);
    res.pretrain_metrics = evaluate(res.pretrained, std::nullopt, data.target_test, data.trigger);
    res.tuned = run_finetune(cfg, data, res.pretrained);
    res.tuned_metrics = evaluate(res.tuned, std::nullopt, data.target_test, data.trigger);
    res.task = std::move(data.task);
    res.proxy_task = std::move(data.proxy_task);
    res.trigger = std::move(data.trigger);
    res.target_test = std::move(data.target_test);
    return res;
}

/// ASR as a function of a global adapter-scale override, on a fixed test set.
inline std::vector<std::pair<double, Metrics>> scale_sweep(const ModelStack& tuned,
                                                           const Dataset& test,
                                                           const TriggerSpec& trig,
                                                           std::span<const double> s_values) {
    std::vector<std::pair<double, Metrics>> out;
    out.reserve(s_values.size());
    for (double s : s_values) {
        out.emplace_back(s, evaluate(tuned, s, test, trig));
    }
    return out;
}

} // namespace sll
