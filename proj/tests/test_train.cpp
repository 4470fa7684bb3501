#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "sll/pipeline.hpp"
#include "sll/train.hpp"

using namespace sll;

namespace {

ModelStack constant_class0_stack(int dim) {
    // zero weights -> logits all tie -> argmax picks class 0 everywhere
    LoraLayer layer;
    layer.name = "layer0";
    layer.w_pre = Matrix(2, dim);
    layer.a = Matrix(1, dim);
    layer.b = Matrix(2, 1);
    layer.rank = 1;
    layer.alpha = 1.0;
    ModelStack stack;
    stack.mode = Mode::frozen;
    stack.layers.push_back(std::move(layer));
    return stack;
}

Dataset labeled_rows(const TaskSpec& task, int n, std::uint64_t seed) {
    Rng rng(seed);
    return sample_clean(task, n, rng);
}

// Independent recount of both metrics with fresh loops, no shared helpers.
Metrics recount(const ModelStack& stack, const Dataset& test, const TriggerSpec& trig) {
    const auto scales = eval_scales(stack, std::nullopt);
    int correct = 0, total = 0, hijacked = 0, eligible = 0;
    for (int i = 0; i < test.n(); ++i) {
        const auto logits = forward(stack, test.inputs.row(i), scales);
        int arg = 0;
        for (std::size_t j = 1; j < logits.size(); ++j) {
            if (logits[j] > logits[static_cast<std::size_t>(arg)]) arg = static_cast<int>(j);
        }
        if (arg == test.labels[static_cast<std::size_t>(i)]) ++correct;
        ++total;
        if (test.labels[static_cast<std::size_t>(i)] != trig.target_label) {
            ++eligible;
            std::vector<double> xt(test.inputs.row(i).begin(), test.inputs.row(i).end());
            for (std::size_t j = 0; j < xt.size(); ++j) xt[j] += trig.strength * trig.direction[j];
            const double n = std::sqrt(std::inner_product(xt.begin(), xt.end(), xt.begin(), 0.0));
            for (double& v : xt) v /= n;
            const auto tl = forward(stack, xt, scales);
            int targ = 0;
            for (std::size_t j = 1; j < tl.size(); ++j) {
                if (tl[j] > tl[static_cast<std::size_t>(targ)]) targ = static_cast<int>(j);
            }
            if (targ == trig.target_label) ++hijacked;
        }
    }
    Metrics m;
    m.ca = double(correct) / double(total);
    m.asr = double(hijacked) / double(eligible);
    m.clean_n = total;
    m.asr_n = eligible;
    return m;
}

PipelineConfig small_pipeline(std::uint64_t seed) {
    PipelineConfig cfg;
    cfg.dim = 16;
    cfg.classes = 4;
    cfg.noise_std = 0.2;
    cfg.shift = 0.2;
    cfg.tau = 1.0;
    cfg.n_train = 300;
    cfg.n_test = 200;
    cfg.n_proxy_train = 400;
    cfg.n_proxy_test = 120;
    cfg.n_poison = 100;
    cfg.clean_label = false; // relabeled triggers give the attack teeth quickly
    cfg.asr_target = 0.9;
    cfg.arch = ArchSpec{1, 0, 4, 16.0};
    cfg.pretrain = TrainConfig{.lr = 2e-3, .epochs = 120, .batch_size = 32, .weight_decay = 0.01};
    cfg.tune = TrainConfig{.lr = 2e-4, .epochs = 4, .batch_size = 32, .weight_decay = 0.01};
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST_CASE("metrics on a constant classifier are hand-countable") {
    const TaskSpec task = make_task(8, 2, 0.2, 3);
    const Dataset test = labeled_rows(task, 10, 5); // labels 0,1 round-robin: 5 each
    const ModelStack stack = constant_class0_stack(8);

    SECTION("target label 0: every eligible row is hijacked") {
        const TriggerSpec trig = make_trigger(task, 0.8, 0, 7);
        const Metrics m = evaluate(stack, std::nullopt, test, trig);
        REQUIRE(m.ca == 0.5);
        REQUIRE(m.asr == 1.0);
        REQUIRE(m.asr_n == 5);
        REQUIRE(m.delta() == -0.5);
    }

    SECTION("target label 1: the constant-0 model never helps the attack") {
        const TriggerSpec trig = make_trigger(task, 0.8, 1, 7);
        const Metrics m = evaluate(stack, std::nullopt, test, trig);
        REQUIRE(m.ca == 0.5);
        REQUIRE(m.asr == 0.0);
    }
}

TEST_CASE("metrics match an independent recount on a random model") {
    const TaskSpec task = make_task(12, 3, 0.4, 11);
    const TriggerSpec trig = make_trigger(task, 0.8, 1, 11);
    const Dataset test = labeled_rows(task, 90, 13);
    Rng rng(17);
    ModelStack stack = make_stack(ArchSpec{1, 0, 2, 8.0}, 12, 3, Mode::lora, rng);
    stack.layers[0].b = gaussian_matrix(rng, 3, 2, 0.5);

    const Metrics lib = evaluate(stack, std::nullopt, test, trig);
    const Metrics ref = recount(stack, test, trig);
    REQUIRE(lib.ca == ref.ca);
    REQUIRE(lib.asr == ref.asr);
    REQUIRE(lib.clean_n == ref.clean_n);
    REQUIRE(lib.asr_n == ref.asr_n);
}

TEST_CASE("evaluation requires rows the attack could flip") {
    const TaskSpec task = make_task(8, 2, 0.2, 3);
    const TriggerSpec trig = make_trigger(task, 0.8, 0, 7);
    Dataset test = labeled_rows(task, 6, 5);
    for (auto& label : test.labels) label = 0; // everything already the target class
    const ModelStack stack = constant_class0_stack(8);
    REQUIRE_THROWS_AS(evaluate(stack, std::nullopt, test, trig), std::invalid_argument);
}

TEST_CASE("scale override zero reduces evaluation to the frozen backbone") {
    const TaskSpec task = make_task(10, 2, 0.3, 19);
    const TriggerSpec trig = make_trigger(task, 0.8, 0, 19);
    const Dataset test = labeled_rows(task, 60, 23);
    Rng rng(29);
    ModelStack tuned = make_stack(ArchSpec{1, 0, 4, 16.0}, 10, 2, Mode::lora, rng);
    tuned.layers[0].b = gaussian_matrix(rng, 2, 4, 0.6);

    ModelStack backbone = tuned;
    backbone.layers[0].b = Matrix(2, 4);

    const Metrics at_zero = evaluate(tuned, 0.0, test, trig);
    const Metrics frozen = evaluate(backbone, std::nullopt, test, trig);
    REQUIRE(at_zero.ca == frozen.ca);
    REQUIRE(at_zero.asr == frozen.asr);
}

TEST_CASE("epoch shuffling is a deterministic permutation") {
    std::vector<std::size_t> idx(50);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng r1(31), r2(31), r3(32);
    auto a = idx, b = idx, c = idx;
    detail::shuffle_indices(a, r1);
    detail::shuffle_indices(b, r2);
    detail::shuffle_indices(c, r3);
    REQUIRE(a == b);
    REQUIRE(a != c);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(sorted == idx);
    REQUIRE(a != idx); // astronomically unlikely to be the identity
}

TEST_CASE("poison pretraining plants a working backdoor on a separable task") {
    const TaskSpec task = make_task(12, 2, 0.15, 41);
    const TriggerSpec trig = make_trigger(task, 1.0, 0, 41);
    Rng data_rng(43);
    const Dataset train = poison(sample_clean(task, 240, data_rng), trig, 60, false);
    const Dataset holdout = labeled_rows(task, 80, 47);

    Rng init_rng(53);
    const ModelStack init = make_stack(ArchSpec{1, 0, 2, 8.0}, 12, 2, Mode::fft, init_rng);
    Rng loop_rng(59);
    const ModelStack trained = pretrain_poison(
        init, train, holdout, trig,
        TrainConfig{.lr = 2e-3, .epochs = 60, .batch_size = 16, .weight_decay = 0.01}, 0.9, 0.9,
        loop_rng);

    const Metrics m = evaluate(trained, std::nullopt, holdout, trig);
    REQUIRE(m.asr >= 0.9);
    REQUIRE(m.ca >= 0.9); // the clean task is easy; poisoning must not wreck it

    SECTION("wrong-mode stacks are rejected") {
        ModelStack lora_stack = init;
        lora_stack.mode = Mode::lora;
        Rng r(1);
        REQUIRE_THROWS_AS(
            pretrain_poison(lora_stack, train, holdout, trig,
                            TrainConfig{.lr = 2e-3, .epochs = 2, .batch_size = 16}, 0.9, 0.0, r),
            std::invalid_argument);
    }

    SECTION("an unreachable target fails loudly at the epoch cap") {
        Rng r(2);
        REQUIRE_THROWS_AS(
            pretrain_poison(init, train, holdout, trig,
                            TrainConfig{.lr = 2e-3, .epochs = 2, .batch_size = 16}, 1.1, 0.0, r),
            PipelineError);
    }

    SECTION("an out-of-range accuracy floor is rejected") {
        Rng r(3);
        REQUIRE_THROWS_AS(
            pretrain_poison(init, train, holdout, trig,
                            TrainConfig{.lr = 2e-3, .epochs = 2, .batch_size = 16}, 0.9, 1.5, r),
            std::invalid_argument);
    }
}

TEST_CASE("fine-tuning rejects poisoned training data") {
    const TaskSpec task = make_task(8, 2, 0.3, 61);
    const TriggerSpec trig = make_trigger(task, 0.8, 0, 61);
    Rng rng(67);
    const Dataset bad = poison(sample_clean(task, 40, rng), trig, 5, true);
    Rng init_rng(71);
    const ModelStack init = make_stack(ArchSpec{1, 0, 2, 8.0}, 8, 2, Mode::fft, init_rng);
    Rng tune_rng(73);
    REQUIRE_THROWS_AS(finetune(init, bad, Method::lora, LossConfig{},
                               TrainConfig{.lr = 2e-4, .epochs = 1, .batch_size = 16,
                                           .weight_decay = 0.0},
                               LayerSelector::parse("all"), tune_rng),
                      std::invalid_argument);
}

TEST_CASE("lora fine-tuning freezes the backbone bit for bit") {
    const TaskSpec task = make_task(10, 2, 0.3, 79);
    Rng rng(83);
    const Dataset train = sample_clean(task, 120, rng);
    Rng init_rng(89);
    const ModelStack pre = make_stack(ArchSpec{1, 0, 4, 16.0}, 10, 2, Mode::fft, init_rng);
    Rng tune_rng(97);
    const ModelStack tuned = finetune(
        pre, train, Method::lora, LossConfig{},
        TrainConfig{.lr = 2e-3, .epochs = 3, .batch_size = 16, .weight_decay = 0.01},
        LayerSelector::parse("all"), tune_rng);
    REQUIRE(tuned.layers[0].w_pre == pre.layers[0].w_pre);
    REQUIRE_FALSE(tuned.layers[0].b.all_zero()); // but the adapter did move
}

TEST_CASE("full fine-tuning updates the backbone and leaves adapters alone") {
    const TaskSpec task = make_task(10, 2, 0.3, 101);
    Rng rng(103);
    const Dataset train = sample_clean(task, 120, rng);
    Rng init_rng(107);
    const ModelStack pre = make_stack(ArchSpec{1, 0, 4, 16.0}, 10, 2, Mode::fft, init_rng);
    Rng tune_rng(109);
    const ModelStack tuned = finetune(
        pre, train, Method::fft, LossConfig{},
        TrainConfig{.lr = 2e-3, .epochs = 3, .batch_size = 16, .weight_decay = 0.01},
        LayerSelector::parse("all"), tune_rng);
    REQUIRE(tuned.mode == Mode::fft);
    REQUIRE_FALSE(tuned.layers[0].w_pre == pre.layers[0].w_pre);
    REQUIRE(tuned.layers[0].a == pre.layers[0].a);
    REQUIRE(tuned.layers[0].b == pre.layers[0].b);
}

TEST_CASE("rora with every toggle off is bit-identical to lora") {
    const TaskSpec task = make_task(12, 2, 0.3, 113);
    Rng rng(127);
    const Dataset train = sample_clean(task, 150, rng);
    Rng init_rng(131);
    const ModelStack pre = make_stack(ArchSpec{1, 0, 4, 16.0}, 12, 2, Mode::fft, init_rng);

    LossConfig off;
    off.lambda = 0.0;
    off.dropout_p = 0.0;

    Rng r1(137), r2(137);
    const TrainConfig tc{.lr = 2e-3, .epochs = 4, .batch_size = 16, .weight_decay = 0.01};
    const ModelStack as_lora =
        finetune(pre, train, Method::lora, off, tc, LayerSelector::parse("all"), r1);
    const ModelStack as_rora =
        finetune(pre, train, Method::rora, off, tc, LayerSelector::parse("all"), r2);

    REQUIRE(as_lora.layers[0].a == as_rora.layers[0].a);
    REQUIRE(as_lora.layers[0].b == as_rora.layers[0].b);
    REQUIRE(as_lora.layers[0].w_pre == as_rora.layers[0].w_pre);
    REQUIRE(as_lora.layers[0].inference_scale == as_rora.layers[0].inference_scale);
}

TEST_CASE("the full pipeline is bit-reproducible from its seed") {
    const PipelineConfig cfg = small_pipeline(5);
    const PipelineResult a = run_pipeline(cfg);
    const PipelineResult b = run_pipeline(cfg);
    REQUIRE(a.tuned.layers[0].a == b.tuned.layers[0].a);
    REQUIRE(a.tuned.layers[0].b == b.tuned.layers[0].b);
    REQUIRE(a.tuned.layers[0].w_pre == b.tuned.layers[0].w_pre);
    REQUIRE(a.pretrain_metrics.ca == b.pretrain_metrics.ca);
    REQUIRE(a.pretrain_metrics.asr == b.pretrain_metrics.asr);
    REQUIRE(a.tuned_metrics.ca == b.tuned_metrics.ca);
    REQUIRE(a.tuned_metrics.asr == b.tuned_metrics.asr);

    // the poisoned backbone carries the backdoor onto the target task
    REQUIRE(a.pretrain_metrics.asr >= 0.8);
    REQUIRE(a.pretrain_metrics.ca >= 0.8);
}

TEST_CASE("pipeline scale sweep evaluates the adapter at explicit scales") {
    const PipelineConfig cfg = small_pipeline(6);
    const PipelineData data = make_pipeline_data(cfg);
    const ModelStack pre = run_pretrain(cfg, data);
    const ModelStack tuned = run_finetune(cfg, data, pre);

    const std::vector<double> s_values{0.0, 1.0, 4.0};
    const auto sweep = scale_sweep(tuned, data.target_test, data.trigger, s_values);
    REQUIRE(sweep.size() == 3);
    REQUIRE(sweep[0].first == 0.0);
    // s = 0 disables the adapter: identical to evaluating the backbone
    const Metrics frozen = evaluate(pre, std::nullopt, data.target_test, data.trigger);
    REQUIRE(sweep[0].second.ca == frozen.ca);
    REQUIRE(sweep[0].second.asr == frozen.asr);
}

TEST_CASE("pretraining schedule knobs are validated") {
    const TaskSpec task = make_task(8, 2, 0.2, 3);
    const TriggerSpec trig = make_trigger(task, 0.8, 0, 7);
    Rng rng(11);
    const Dataset train = poison(sample_clean(task, 40, rng), trig, 10, false);
    const Dataset holdout = labeled_rows(task, 20, 13);
    Rng init_rng(17);
    const ModelStack init = make_stack(ArchSpec{1, 0, 2, 8.0}, 8, 2, Mode::fft, init_rng);

    Rng r(1);
    REQUIRE_THROWS_AS( // success gate can never arm beyond the epoch cap
        pretrain_poison(init, train, holdout, trig,
                        TrainConfig{.lr = 2e-3, .epochs = 4, .min_epochs = 5, .batch_size = 16},
                        0.5, 0.0, r),
        std::invalid_argument);
    REQUIRE_THROWS_AS( // a warmup covering every epoch would never see the poison
        pretrain_poison(init, train, holdout, trig,
                        TrainConfig{.lr = 2e-3, .epochs = 4, .clean_warmup_epochs = 4,
                                    .batch_size = 16},
                        0.5, 0.0, r),
        std::invalid_argument);
    REQUIRE_THROWS_AS(
        pretrain_poison(init, train, holdout, trig,
                        TrainConfig{.lr = 2e-3, .epochs = 4, .stop_check_steps = -1,
                                    .batch_size = 16},
                        0.5, 0.0, r),
        std::invalid_argument);

    const Dataset all_poisoned = poison(sample_clean(task, 10, rng), trig, 10, false);
    REQUIRE_THROWS_AS(
        pretrain_poison(init, all_poisoned, holdout, trig,
                        TrainConfig{.lr = 2e-3, .epochs = 4, .clean_warmup_epochs = 1,
                                    .batch_size = 16},
                        0.5, 0.0, r),
        std::invalid_argument);
}

TEST_CASE("minimum-epoch gate defers an immediately satisfied stop rule") {
    const TaskSpec task = make_task(12, 2, 0.15, 41);
    const TriggerSpec trig = make_trigger(task, 1.0, 0, 41);
    Rng data_rng(43);
    const Dataset train = poison(sample_clean(task, 240, data_rng), trig, 60, false);
    const Dataset holdout = labeled_rows(task, 80, 47);
    Rng init_rng(53);
    const ModelStack init = make_stack(ArchSpec{1, 0, 2, 8.0}, 12, 2, Mode::fft, init_rng);

    // an easy target is reached within the first epochs; the gated run must
    // keep training and therefore end in a different state
    Rng r1(59), r2(59);
    const TrainConfig eager{.lr = 2e-3, .epochs = 40, .batch_size = 16, .weight_decay = 0.01};
    TrainConfig gated = eager;
    gated.min_epochs = 40;
    const ModelStack early = pretrain_poison(init, train, holdout, trig, eager, 0.5, 0.0, r1);
    const ModelStack late = pretrain_poison(init, train, holdout, trig, gated, 0.5, 0.0, r2);
    REQUIRE_FALSE(early.layers[0].w_pre == late.layers[0].w_pre);
    REQUIRE(evaluate(late, std::nullopt, holdout, trig).asr >= 0.5);
}

TEST_CASE("two-phase pretraining with step-level checks is reproducible") {
    const TaskSpec task = make_task(12, 2, 0.15, 41);
    const TriggerSpec trig = make_trigger(task, 1.0, 0, 41);
    Rng data_rng(43);
    const Dataset train = poison(sample_clean(task, 240, data_rng), trig, 60, false);
    const Dataset holdout = labeled_rows(task, 80, 47);
    Rng init_rng(53);
    const ModelStack init = make_stack(ArchSpec{1, 0, 2, 8.0}, 12, 2, Mode::fft, init_rng);

    const TrainConfig two_phase{.lr = 2e-3, .epochs = 60, .min_epochs = 9,
                                .clean_warmup_epochs = 8, .stop_check_steps = 3,
                                .batch_size = 16, .weight_decay = 0.01};
    Rng r1(61), r2(61), r3(61);
    const ModelStack a = pretrain_poison(init, train, holdout, trig, two_phase, 0.9, 0.8, r1);
    const ModelStack b = pretrain_poison(init, train, holdout, trig, two_phase, 0.9, 0.8, r2);
    REQUIRE(a.layers[0].w_pre == b.layers[0].w_pre);

    const Metrics m = evaluate(a, std::nullopt, holdout, trig);
    REQUIRE(m.asr >= 0.9);
    REQUIRE(m.ca >= 0.8);

    // without the mid-epoch checks the stop lands on an epoch boundary, i.e.
    // strictly later here, after more optimizer steps
    TrainConfig boundary_only = two_phase;
    boundary_only.stop_check_steps = 0;
    const ModelStack c = pretrain_poison(init, train, holdout, trig, boundary_only, 0.9, 0.8, r3);
    REQUIRE_FALSE(a.layers[0].w_pre == c.layers[0].w_pre);
}
