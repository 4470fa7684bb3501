#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sll/dataset.hpp"
#include "sll/errors.hpp"
#include "sll/matrix.hpp"
#include "sll/model.hpp"

namespace sll {

// Container format (little-endian throughout):
//   magic "SLLB" | u32 version | u32 tensor count
//   per tensor:  u32 name length | name bytes | u32 rows | u32 cols
//                rows*cols doubles, row-major
//   trailer:     u32 text length | resolved-config text bytes
// Model and dataset payloads are plain tensor sets plus reserved names for
// the bits that are not matrices (mode, per-layer rank/alpha/pinned scale,
// labels, poison flags), so one container type serves both.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::vector<std::pair<std::string, Matrix>> tensors; // order is preserved
    std::string config_text;

    const Matrix* find(const std::string& name) const {
        for (const auto& [n, m] : tensors) {
            if (n == name) return &m;
        }
        return nullptr;
    }
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");
static_assert(sizeof(double) == 8, "checkpoint serialization assumes 64-bit doubles");

inline void put_u32(std::string& out, std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, std::string where)
        : bytes_(bytes), where_(std::move(where)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, bytes_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }

    std::string text(std::size_t len) {
        need(len);
        std::string s = bytes_.substr(pos_, len);
        pos_ += len;
        return s;
    }

    void doubles(double* dst, std::size_t count) {
        need(count * sizeof(double));
        std::memcpy(dst, bytes_.data() + pos_, count * sizeof(double));
        pos_ += count * sizeof(double);
    }

    bool exhausted() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) {
        if (bytes_.size() - pos_ < n) {
            throw ConfigError(where_ + ": truncated checkpoint (needed " + std::to_string(n) +
                              " more bytes at offset " + std::to_string(pos_) + ")");
        }
    }

    const std::string& bytes_;
    std::string where_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::string out;
    out.append("SLLB", 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, m] : ckpt.tensors) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
        detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
        const std::size_t bytes = m.size() * sizeof(double);
        const std::size_t at = out.size();
        out.resize(at + bytes);
        if (bytes > 0) std::memcpy(out.data() + at, m.data().data(), bytes);
    }
    detail::put_u32(out, static_cast<std::uint32_t>(ckpt.config_text.size()));
    out.append(ckpt.config_text);

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw ConfigError("save_checkpoint: cannot open " + path.string());
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw ConfigError("save_checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw ConfigError("load_checkpoint: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    detail::ByteReader in(bytes, "load_checkpoint");
    if (in.text(4) != "SLLB") {
        throw ConfigError("load_checkpoint: bad magic in " + path.string() +
                          " (not a checkpoint file)");
    }
    const std::uint32_t version = in.u32();
    if (version != kCheckpointVersion) {
        throw ConfigError("load_checkpoint: version mismatch in " + path.string() + " (file has " +
                          std::to_string(version) + ", reader supports " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ckpt;
    const std::uint32_t count = in.u32();
    ckpt.tensors.reserve(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint32_t name_len = in.u32();
        std::string name = in.text(name_len);
        const std::uint32_t rows = in.u32();
        const std::uint32_t cols = in.u32();
        Matrix m(static_cast<int>(rows), static_cast<int>(cols));
        in.doubles(m.data().data(), m.size());
        ckpt.tensors.emplace_back(std::move(name), std::move(m));
    }
    const std::uint32_t text_len = in.u32();
    ckpt.config_text = in.text(text_len);
    if (!in.exhausted()) {
        throw ConfigError("load_checkpoint: trailing bytes after the config block in " +
                          path.string());
    }
    return ckpt;
}

// ---- model payload ----------------------------------------------------------

/// Tensor layout for a model: one "__mode__" cell, then per layer
/// "<name>/meta" = [rank, alpha, has pinned scale, pinned scale] plus the
/// three weight matrices. Layer order is the stack order.
inline Checkpoint model_checkpoint(const ModelStack& stack, std::string config_text) {
    Checkpoint ckpt;
    ckpt.config_text = std::move(config_text);
    Matrix mode(1, 1);
    mode(0, 0) = static_cast<double>(static_cast<int>(stack.mode));
    ckpt.tensors.emplace_back("__mode__", std::move(mode));
    for (const auto& layer : stack.layers) {
        Matrix meta(1, 4);
        meta(0, 0) = static_cast<double>(layer.rank);
        meta(0, 1) = layer.alpha;
        meta(0, 2) = layer.inference_scale ? 1.0 : 0.0;
        meta(0, 3) = layer.inference_scale.value_or(0.0);
        ckpt.tensors.emplace_back(layer.name + "/meta", std::move(meta));
        ckpt.tensors.emplace_back(layer.name + "/w_pre", layer.w_pre);
        ckpt.tensors.emplace_back(layer.name + "/a", layer.a);
        ckpt.tensors.emplace_back(layer.name + "/b", layer.b);
    }
    return ckpt;
}

inline ModelStack stack_from_checkpoint(const Checkpoint& ckpt) {
    const Matrix* mode = ckpt.find("__mode__");
    if (!mode || mode->rows() != 1 || mode->cols() != 1) {
        throw ConfigError("stack_from_checkpoint: missing or malformed __mode__ cell");
    }
    const int mode_value = static_cast<int>((*mode)(0, 0));
    if (mode_value < 0 || mode_value > static_cast<int>(Mode::lora)) {
        throw ConfigError("stack_from_checkpoint: unknown mode value " +
                          std::to_string(mode_value));
    }
    ModelStack stack;
    stack.mode = static_cast<Mode>(mode_value);
    for (const auto& [name, meta] : ckpt.tensors) {
        const std::size_t slash = name.rfind("/meta");
        if (slash == std::string::npos || slash + 5 != name.size()) continue;
        const std::string layer_name = name.substr(0, slash);
        if (meta.rows() != 1 || meta.cols() != 4) {
            throw ConfigError("stack_from_checkpoint: malformed meta for layer " + layer_name);
        }
        const Matrix* w_pre = ckpt.find(layer_name + "/w_pre");
        const Matrix* a = ckpt.find(layer_name + "/a");
        const Matrix* b = ckpt.find(layer_name + "/b");
        if (!w_pre || !a || !b) {
            throw ConfigError("stack_from_checkpoint: layer " + layer_name +
                              " is missing a weight tensor");
        }
        LoraLayer layer;
        layer.name = layer_name;
        layer.rank = static_cast<int>(meta(0, 0));
        layer.alpha = meta(0, 1);
        if (meta(0, 2) != 0.0) layer.inference_scale = meta(0, 3);
        layer.w_pre = *w_pre;
        layer.a = *a;
        layer.b = *b;
        if (layer.rank < 1 || layer.a.rows() != layer.rank || layer.b.cols() != layer.rank ||
            layer.a.cols() != layer.w_pre.cols() || layer.b.rows() != layer.w_pre.rows()) {
            throw ConfigError("stack_from_checkpoint: inconsistent shapes for layer " +
                              layer_name);
        }
        stack.layers.push_back(std::move(layer));
    }
    if (stack.layers.empty()) {
        throw ConfigError("stack_from_checkpoint: no layers found");
    }
    return stack;
}

// ---- dataset payload --------------------------------------------------------

/// Tensor layout for a dataset: "data/inputs" (n x d), "data/labels" and
/// "data/poisoned" (n x 1). Labels and flags are small integers, which
/// doubles carry exactly.
inline Checkpoint dataset_checkpoint(const Dataset& ds, std::string config_text) {
    Checkpoint ckpt;
    ckpt.config_text = std::move(config_text);
    ckpt.tensors.emplace_back("data/inputs", ds.inputs);
    Matrix labels(ds.n(), 1);
    Matrix poisoned(ds.n(), 1);
    for (int i = 0; i < ds.n(); ++i) {
        labels(i, 0) = static_cast<double>(ds.labels[static_cast<std::size_t>(i)]);
        poisoned(i, 0) = static_cast<double>(ds.poisoned[static_cast<std::size_t>(i)]);
    }
    ckpt.tensors.emplace_back("data/labels", std::move(labels));
    ckpt.tensors.emplace_back("data/poisoned", std::move(poisoned));
    return ckpt;
}

inline Dataset dataset_from_checkpoint(const Checkpoint& ckpt) {
    const Matrix* inputs = ckpt.find("data/inputs");
    const Matrix* labels = ckpt.find("data/labels");
    const Matrix* poisoned = ckpt.find("data/poisoned");
    if (!inputs || !labels || !poisoned) {
        throw ConfigError("dataset_from_checkpoint: missing a data tensor");
    }
    if (labels->rows() != inputs->rows() || labels->cols() != 1 ||
        poisoned->rows() != inputs->rows() || poisoned->cols() != 1) {
        throw ConfigError("dataset_from_checkpoint: inconsistent data shapes");
    }
    Dataset ds;
    ds.inputs = *inputs;
    ds.labels.resize(static_cast<std::size_t>(inputs->rows()));
    ds.poisoned.resize(static_cast<std::size_t>(inputs->rows()));
    for (int i = 0; i < inputs->rows(); ++i) {
        ds.labels[static_cast<std::size_t>(i)] = static_cast<int>((*labels)(i, 0));
        ds.poisoned[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>((*poisoned)(i, 0));
    }
    return ds;
}

} // namespace sll
