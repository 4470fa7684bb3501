#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "sll/checkpoint.hpp"

using namespace sll;

namespace {

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct TempFile {
    std::filesystem::path path;
    explicit TempFile(const char* name) : path(std::filesystem::temp_directory_path() / name) {}
    ~TempFile() { std::filesystem::remove(path); }
};

ModelStack sample_stack() {
    Rng rng(2024);
    ModelStack stack = make_stack(ArchSpec{2, 6, 3, 12.0}, 5, 4, Mode::lora, rng);
    stack.layers[0].b = gaussian_matrix(rng, stack.layers[0].out_dim(), 3, 0.3);
    stack.layers[1].inference_scale = 2.5;
    return stack;
}

} // namespace

TEST_CASE("model checkpoints roundtrip bit for bit") {
    const ModelStack stack = sample_stack();
    const Checkpoint ckpt = model_checkpoint(stack, "{\"note\":\"resolved config here\"}");

    TempFile f("sll_test_model.ckpt");
    save_checkpoint(f.path, ckpt);
    const Checkpoint back = load_checkpoint(f.path);

    REQUIRE(back.config_text == ckpt.config_text);
    REQUIRE(back.tensors.size() == ckpt.tensors.size());
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
        REQUIRE(back.tensors[i].first == ckpt.tensors[i].first);
        REQUIRE(back.tensors[i].second == ckpt.tensors[i].second);
    }

    const ModelStack again = stack_from_checkpoint(back);
    REQUIRE(again.mode == stack.mode);
    REQUIRE(again.layers.size() == stack.layers.size());
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        REQUIRE(again.layers[l].name == stack.layers[l].name);
        REQUIRE(again.layers[l].rank == stack.layers[l].rank);
        REQUIRE(again.layers[l].alpha == stack.layers[l].alpha);
        REQUIRE(again.layers[l].inference_scale == stack.layers[l].inference_scale);
        REQUIRE(again.layers[l].w_pre == stack.layers[l].w_pre);
        REQUIRE(again.layers[l].a == stack.layers[l].a);
        REQUIRE(again.layers[l].b == stack.layers[l].b);
    }

    SECTION("save -> load -> save produces byte-identical files") {
        TempFile g("sll_test_model2.ckpt");
        save_checkpoint(g.path, back);
        REQUIRE(slurp(g.path) == slurp(f.path));
    }
}

TEST_CASE("dataset checkpoints roundtrip exactly") {
    const TaskSpec task = make_task(6, 3, 0.3, 77);
    const TriggerSpec trig = make_trigger(task, 0.8, 0, 77);
    Rng rng(78);
    const Dataset ds = poison(sample_clean(task, 21, rng), trig, 4, false);

    TempFile f("sll_test_data.ckpt");
    save_checkpoint(f.path, dataset_checkpoint(ds, "cfg"));
    const Dataset back = dataset_from_checkpoint(load_checkpoint(f.path));
    REQUIRE(back.inputs == ds.inputs);
    REQUIRE(back.labels == ds.labels);
    REQUIRE(back.poisoned == ds.poisoned);
}

TEST_CASE("an empty container still carries its config text") {
    Checkpoint ckpt;
    ckpt.config_text = "just text";
    TempFile f("sll_test_empty.ckpt");
    save_checkpoint(f.path, ckpt);
    const Checkpoint back = load_checkpoint(f.path);
    REQUIRE(back.tensors.empty());
    REQUIRE(back.config_text == "just text");
}

TEST_CASE("checkpoint reader rejects damaged files with distinct errors") {
    const Checkpoint ckpt = model_checkpoint(sample_stack(), "cfg");
    TempFile f("sll_test_damage.ckpt");
    save_checkpoint(f.path, ckpt);
    const std::string good = slurp(f.path);

    SECTION("bad magic") {
        std::string bad = good;
        bad[0] = 'X';
        spit(f.path, bad);
        REQUIRE_THROWS_WITH(load_checkpoint(f.path), Catch::Matchers::ContainsSubstring("bad magic"));
    }

    SECTION("version mismatch") {
        std::string bad = good;
        bad[4] = char(kCheckpointVersion + 1);
        spit(f.path, bad);
        REQUIRE_THROWS_WITH(load_checkpoint(f.path),
                            Catch::Matchers::ContainsSubstring("version mismatch"));
    }

    SECTION("truncation anywhere in the tensor block") {
        spit(f.path, good.substr(0, good.size() / 2));
        REQUIRE_THROWS_WITH(load_checkpoint(f.path),
                            Catch::Matchers::ContainsSubstring("truncated"));
    }

    SECTION("truncation that removes the config trailer") {
        spit(f.path, good.substr(0, good.size() - ckpt.config_text.size() - 1));
        REQUIRE_THROWS_WITH(load_checkpoint(f.path),
                            Catch::Matchers::ContainsSubstring("truncated"));
    }

    SECTION("trailing bytes after the config block") {
        spit(f.path, good + "junk");
        REQUIRE_THROWS_WITH(load_checkpoint(f.path),
                            Catch::Matchers::ContainsSubstring("trailing bytes"));
    }

    SECTION("a tensor count promising more than the file holds") {
        std::string bad = good;
        bad[8] = char(60); // tensor count lives right after magic + version
        spit(f.path, bad);
        REQUIRE_THROWS_WITH(load_checkpoint(f.path),
                            Catch::Matchers::ContainsSubstring("truncated"));
    }
}

TEST_CASE("model reconstruction validates the tensor set") {
    const ModelStack stack = sample_stack();
    Checkpoint ckpt = model_checkpoint(stack, "cfg");

    SECTION("missing weight tensor") {
        Checkpoint broken;
        broken.config_text = ckpt.config_text;
        for (const auto& [n, m] : ckpt.tensors) {
            if (n.find("/a") == std::string::npos) broken.tensors.emplace_back(n, m);
        }
        REQUIRE_THROWS_AS(stack_from_checkpoint(broken), ConfigError);
    }

    SECTION("missing mode cell") {
        Checkpoint broken;
        broken.config_text = ckpt.config_text;
        for (const auto& [n, m] : ckpt.tensors) {
            if (n != "__mode__") broken.tensors.emplace_back(n, m);
        }
        REQUIRE_THROWS_AS(stack_from_checkpoint(broken), ConfigError);
    }

    SECTION("shape mismatch between adapter and backbone") {
        Checkpoint broken = ckpt;
        for (auto& [n, m] : broken.tensors) {
            if (n == stack.layers[0].name + "/a") m = Matrix(stack.layers[0].rank, 99);
        }
        REQUIRE_THROWS_AS(stack_from_checkpoint(broken), ConfigError);
    }

    SECTION("dataset tensors are not a model") {
        const TaskSpec task = make_task(6, 2, 0.3, 5);
        Rng rng(6);
        const Checkpoint data = dataset_checkpoint(sample_clean(task, 8, rng), "cfg");
        REQUIRE_THROWS_AS(stack_from_checkpoint(data), ConfigError);
    }
}
