#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qvit/errors.hpp"
#include "qvit/qsim.hpp"
#include "qvit/tensor.hpp"

namespace qvit {

enum class Mode { classical, quantum };

// How QMHA/QMLP map D-dimensional rows onto square circuits.
//   per_projection: one D-qubit circuit per linear map.
//   split_halves:   D/2-qubit circuits applied to the two halves of each row;
//                   attention projections share one circuit across halves,
//                   MLP layers use a separate circuit per half.
enum class QmhaScheme { per_projection, split_halves };

struct ModelConfig {
    std::size_t image_size = 125;
    std::size_t crop_size = 120;
    std::size_t channels = 3;
    std::size_t patch_size = 10;
    std::size_t hidden_size = 8;
    std::size_t num_blocks = 4;
    std::size_t num_heads = 4;
    std::size_t mlp_hidden = 4;
    std::size_t num_classes = 2;
    Mode mode = Mode::quantum;
    QmhaScheme qmha_scheme = QmhaScheme::per_projection;
    bool vqc_bias = false;
    qsim::GradientMethod vqc_gradient = qsim::GradientMethod::parameter_shift;

    /// Hyperparameters of the full-size model (125 px images, D = 8, 4 blocks).
    static ModelConfig full() { return {}; }

    /// Desk-scale configuration: every circuit has exactly 4 qubits.
    static ModelConfig desk() {
        ModelConfig cfg;
        cfg.image_size = 40;
        cfg.crop_size = 40;
        cfg.hidden_size = 4;
        cfg.num_blocks = 2;
        cfg.num_heads = 2;
        return cfg;
    }

    std::size_t patches_per_side() const { return crop_size / patch_size; }
    std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
    std::size_t patch_dim() const { return patch_size * patch_size * channels; }
    std::size_t num_tokens() const { return num_patches() + 1; }
    std::size_t head_dim() const { return hidden_size / num_heads; }

    void validate() const {
        if (image_size == 0 || crop_size == 0 || channels == 0 || patch_size == 0 || hidden_size == 0 ||
            num_blocks == 0 || num_heads == 0 || mlp_hidden == 0 || num_classes < 2)
            throw ConfigError("model dimensions must be positive (and num_classes >= 2)");
        if (crop_size > image_size)
            throw ConfigError("crop_size " + std::to_string(crop_size) + " larger than image_size " +
                              std::to_string(image_size));
        if (crop_size % patch_size != 0)
            throw ConfigError("crop_size " + std::to_string(crop_size) + " not divisible by patch_size " +
                              std::to_string(patch_size));
        if (hidden_size % num_heads != 0)
            throw ConfigError("hidden_size " + std::to_string(hidden_size) + " not divisible by num_heads " +
                              std::to_string(num_heads));
        if (mode == Mode::quantum && qmha_scheme == QmhaScheme::split_halves && hidden_size % 2 != 0)
            throw ConfigError("split_halves scheme requires an even hidden_size");
    }

    bool operator==(const ModelConfig&) const = default;
};

inline std::string to_string(Mode m) { return m == Mode::classical ? "classical" : "quantum"; }
inline std::string to_string(QmhaScheme s) { return s == QmhaScheme::per_projection ? "per_projection" : "split_halves"; }
inline std::string to_string(qsim::GradientMethod g) {
    return g == qsim::GradientMethod::parameter_shift ? "parameter_shift" : "adjoint";
}

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

struct ParamEntry {
    std::string name;
    std::string group;  // component label used by count breakdowns
    Tensor tensor;
    bool decay = true;  // subject to decoupled weight decay
};

using ParamGrads = std::vector<std::vector<double>>;

/// Named, ordered registry of trainable tensors. Insertion order is the
/// canonical order used by serialization and optimizers.
class ParamStore {
public:
    Tensor& add(std::string name, std::string group, Shape shape, std::vector<double> values, bool decay) {
        if (find(name) != nullptr) throw RegistryError("duplicate parameter name " + name);
        entries_.push_back({std::move(name), std::move(group), Tensor::parameter(std::move(shape), std::move(values)), decay});
        return entries_.back().tensor;
    }

    const Tensor& at(const std::string& name) const {
        if (auto* e = find(name)) return e->tensor;
        throw RegistryError("unknown parameter " + name);
    }
    bool contains(const std::string& name) const { return find(name) != nullptr; }

    std::span<const ParamEntry> entries() const { return entries_; }
    std::span<ParamEntry> entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.size();
        return n;
    }

    ParamGrads zero_grads() const {
        ParamGrads g;
        for (const auto& e : entries_) g.emplace_back(e.tensor.size(), 0.0);
        return g;
    }

    ParamGrads gather(const GradientMap& grads) const {
        ParamGrads g;
        for (const auto& e : entries_) g.push_back(grads.get(e.tensor));
        return g;
    }

    // Deep copy: new storage, same names and values.
    ParamStore clone() const {
        ParamStore out;
        for (const auto& e : entries_) {
            std::vector<double> v(e.tensor.values().begin(), e.tensor.values().end());
            out.add(e.name, e.group, e.tensor.shape(), std::move(v), e.decay);
        }
        return out;
    }

private:
    const ParamEntry* find(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }
    std::vector<ParamEntry> entries_;
};

namespace detail {

struct Initializer {
    std::mt19937_64 rng;
    bool zero = false;  // registry enumeration only

    std::vector<double> xavier(std::size_t out, std::size_t in) {
        std::vector<double> v(out * in, 0.0);
        if (zero) return v;
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (auto& x : v) x = dist(rng);
        return v;
    }
    std::vector<double> normal(std::size_t n, double stddev) {
        std::vector<double> v(n, 0.0);
        if (zero) return v;
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& x : v) x = dist(rng);
        return v;
    }
    std::vector<double> uniform(std::size_t n, double lo, double hi) {
        std::vector<double> v(n, 0.0);
        if (zero) return v;
        std::uniform_real_distribution<double> dist(lo, hi);
        for (auto& x : v) x = dist(rng);
        return v;
    }
    static std::vector<double> constant(std::size_t n, double c) { return std::vector<double>(n, c); }
};

inline void add_projection(ParamStore& store, Initializer& init, const ModelConfig& cfg, const std::string& name,
                           const std::string& group, std::size_t in, std::size_t out, bool split_separate) {
    if (cfg.mode == Mode::classical) {
        store.add(name + ".weight", group, {out, in}, init.xavier(out, in), true);
        store.add(name + ".bias", group, {out}, Initializer::constant(out, 0.0), false);
        return;
    }
    const std::size_t d = cfg.hidden_size;
    const double pi = std::numbers::pi;
    if (cfg.qmha_scheme == QmhaScheme::per_projection) {
        store.add(name + ".theta", group, {d}, init.uniform(d, -pi, pi), true);
    } else if (split_separate) {
        store.add(name + ".theta_lo", group, {d / 2}, init.uniform(d / 2, -pi, pi), true);
        store.add(name + ".theta_hi", group, {d / 2}, init.uniform(d / 2, -pi, pi), true);
    } else {
        store.add(name + ".theta", group, {d / 2}, init.uniform(d / 2, -pi, pi), true);
    }
    if (cfg.vqc_bias) store.add(name + ".bias", group, {d}, Initializer::constant(d, 0.0), false);
}

inline ParamStore build_params(const ModelConfig& cfg, Initializer& init) {
    cfg.validate();
    const std::size_t d = cfg.hidden_size, p = cfg.patch_dim();
    ParamStore store;
    store.add("patch_embed.weight", "patch_embed", {d, p}, init.xavier(d, p), true);
    store.add("patch_embed.bias", "patch_embed", {d}, Initializer::constant(d, 0.0), false);
    store.add("class_token", "class_token", {d}, Initializer::constant(d, 0.0), false);
    store.add("pos_embed", "pos_embed", {cfg.num_tokens(), d}, init.normal(cfg.num_tokens() * d, 0.02), false);
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        const std::string prefix = "blocks." + std::to_string(b);
        for (const char* ln : {".ln1", ".ln2"}) {
            store.add(prefix + ln + ".gamma", "layer_norm", {d}, Initializer::constant(d, 1.0), false);
            store.add(prefix + ln + ".beta", "layer_norm", {d}, Initializer::constant(d, 0.0), false);
        }
        for (const char* proj : {".attn.q", ".attn.k", ".attn.v", ".attn.o"})
            add_projection(store, init, cfg, prefix + proj, "attention", d, d, false);
        add_projection(store, init, cfg, prefix + ".mlp.fc1", "mlp", d, cfg.mlp_hidden, true);
        add_projection(store, init, cfg, prefix + ".mlp.fc2", "mlp", cfg.mlp_hidden, d, true);
    }
    store.add("head.weight", "head", {cfg.num_classes, d}, init.xavier(cfg.num_classes, d), true);
    store.add("head.bias", "head", {cfg.num_classes}, Initializer::constant(cfg.num_classes, 0.0), false);
    return store;
}

}  // namespace detail

/// Randomly initialized registry, deterministic in `seed`.
inline ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    detail::Initializer init{std::mt19937_64(seed)};
    return detail::build_params(cfg, init);
}

struct ParamCount {
    std::vector<std::pair<std::string, std::size_t>> components;
    std::size_t total = 0;
};

/// Per-component and total trainable-parameter counts, enumerated from the registry.
inline ParamCount count_params(const ModelConfig& cfg) {
    detail::Initializer init{std::mt19937_64(0), true};
    auto store = detail::build_params(cfg, init);
    ParamCount count;
    for (const auto& e : store.entries()) {
        auto it = std::find_if(count.components.begin(), count.components.end(),
                               [&](const auto& c) { return c.first == e.group; });
        if (it == count.components.end())
            count.components.emplace_back(e.group, e.tensor.size());
        else
            it->second += e.tensor.size();
        count.total += e.tensor.size();
    }
    return count;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Center crop to crop_size, then non-overlapping patch_size tiles in
/// row-major patch order; each patch flattened channel-major (c, dy, dx).
template <typename T>
Tensor extract_patches(std::span<const T> image, const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t c = cfg.channels, h = cfg.image_size, ps = cfg.patch_size;
    if (image.size() != c * h * h)
        throw DimensionError("extract_patches: expected " + shape_str({c, h, h}) + " image, got " +
                             std::to_string(image.size()) + " values");
    const std::size_t offset = (h - cfg.crop_size) / 2, side = cfg.patches_per_side(), dim = cfg.patch_dim();
    std::vector<double> out(cfg.num_patches() * dim);
    for (std::size_t py = 0; py < side; ++py)
        for (std::size_t px = 0; px < side; ++px) {
            double* dst = out.data() + (py * side + px) * dim;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t dy = 0; dy < ps; ++dy)
                    for (std::size_t dx = 0; dx < ps; ++dx) {
                        const std::size_t y = offset + py * ps + dy, x = offset + px * ps + dx;
                        *dst++ = static_cast<double>(image[(ch * h + y) * h + x]);
                    }
        }
    return Tensor({cfg.num_patches(), dim}, std::move(out));
}

inline Tensor extract_patches(const Tensor& image, const ModelConfig& cfg) {
    if (image.shape() != Shape{cfg.channels, cfg.image_size, cfg.image_size})
        throw DimensionError("extract_patches: image " + shape_str(image.shape()) + " does not match config " +
                             shape_str({cfg.channels, cfg.image_size, cfg.image_size}));
    return extract_patches(image.values(), cfg);
}

/// Token matrix: class token row followed by embedded patches, plus pos_embed.
inline Tensor embed(Tape& tape, const Tensor& patches, const ParamStore& params, const ModelConfig& cfg) {
    if (patches.rank() != 2 || patches.dim(1) != cfg.patch_dim())
        throw DimensionError("embed: patches " + shape_str(patches.shape()) + " need trailing dimension " +
                             std::to_string(cfg.patch_dim()));
    auto tokens = affine(tape, patches, params.at("patch_embed.weight"), params.at("patch_embed.bias"));
    auto cls = reshape(tape, params.at("class_token"), {1, cfg.hidden_size});
    return add(tape, concat(tape, {cls, tokens}, 0), params.at("pos_embed"));
}

/// softmax(QKᵀ/√Dk)·V, softmax over keys.
inline Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0))
        throw DimensionError("attention: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) + ", V " +
                             shape_str(v.shape()));
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
    auto scores = scale(tape, matmul(tape, q, transpose(tape, k)), inv_sqrt_dk);
    return matmul(tape, softmax(tape, scores), v);
}

namespace detail {

inline Tensor quantum_map(Tape& tape, const Tensor& x, const Tensor& theta, const ModelConfig& cfg) {
    return qsim::quantum_linear(tape, qsim::VqcSpec(theta.size()), theta, x, cfg.vqc_gradient);
}

// One linear map of the encoder: affine (classical) or VQC (quantum).
inline Tensor project(Tape& tape, const Tensor& x, const ParamStore& params, const std::string& name,
                      const ModelConfig& cfg, bool split_separate) {
    if (cfg.mode == Mode::classical) return affine(tape, x, params.at(name + ".weight"), params.at(name + ".bias"));
    Tensor out;
    const std::size_t rows = x.dim(0), d = cfg.hidden_size;
    if (cfg.qmha_scheme == QmhaScheme::per_projection) {
        out = quantum_map(tape, x, params.at(name + ".theta"), cfg);
    } else if (split_separate) {
        auto halves = split(tape, x, {d / 2, d / 2}, 1);
        out = concat(tape,
                     {quantum_map(tape, halves[0], params.at(name + ".theta_lo"), cfg),
                      quantum_map(tape, halves[1], params.at(name + ".theta_hi"), cfg)},
                     1);
    } else {
        auto stacked = reshape(tape, x, {rows * 2, d / 2});
        out = reshape(tape, quantum_map(tape, stacked, params.at(name + ".theta"), cfg), {rows, d});
    }
    if (cfg.vqc_bias) out = bias_add(tape, out, params.at(name + ".bias"));
    return out;
}

}  // namespace detail

/// Multi-head self-attention with every projection (Q, K, V, O) realized by
/// the configured linear map. `prefix` selects the block, e.g. "blocks.0".
inline Tensor qmha(Tape& tape, const Tensor& x, const ParamStore& params, const std::string& prefix,
                   const ModelConfig& cfg) {
    if (x.rank() != 2 || x.dim(1) != cfg.hidden_size)
        throw DimensionError("qmha: input " + shape_str(x.shape()) + " needs trailing dimension " +
                             std::to_string(cfg.hidden_size));
    auto q = detail::project(tape, x, params, prefix + ".attn.q", cfg, false);
    auto k = detail::project(tape, x, params, prefix + ".attn.k", cfg, false);
    auto v = detail::project(tape, x, params, prefix + ".attn.v", cfg, false);
    const std::size_t dk = cfg.head_dim();
    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < cfg.num_heads; ++h)
        heads.push_back(attention(tape, slice(tape, q, 1, h * dk, dk), slice(tape, k, 1, h * dk, dk),
                                  slice(tape, v, 1, h * dk, dk)));
    auto merged = cfg.num_heads == 1 ? heads.front() : concat(tape, heads, 1);
    return detail::project(tape, merged, params, prefix + ".attn.o", cfg, false);
}

/// Two linear maps around a classical GELU. In quantum mode both maps are
/// D → D circuits and mlp_hidden is unused.
inline Tensor qmlp(Tape& tape, const Tensor& x, const ParamStore& params, const std::string& prefix,
                   const ModelConfig& cfg) {
    if (x.rank() != 2 || x.dim(1) != cfg.hidden_size)
        throw DimensionError("qmlp: input " + shape_str(x.shape()) + " needs trailing dimension " +
                             std::to_string(cfg.hidden_size));
    auto hidden = gelu(tape, detail::project(tape, x, params, prefix + ".mlp.fc1", cfg, true));
    return detail::project(tape, hidden, params, prefix + ".mlp.fc2", cfg, true);
}

/// Z = X + LayerNorm(MHA(X)); X' = Z + LayerNorm(MLP(Z)).
inline Tensor encoder_block(Tape& tape, const Tensor& x, const ParamStore& params, const std::string& prefix,
                            const ModelConfig& cfg) {
    auto attn = qmha(tape, x, params, prefix, cfg);
    auto z = add(tape, x, layer_norm(tape, attn, params.at(prefix + ".ln1.gamma"), params.at(prefix + ".ln1.beta")));
    auto mlp = qmlp(tape, z, params, prefix, cfg);
    return add(tape, z, layer_norm(tape, mlp, params.at(prefix + ".ln2.gamma"), params.at(prefix + ".ln2.beta")));
}

inline std::string block_prefix(std::size_t b) { return "blocks." + std::to_string(b); }

/// Logits [num_classes] from pre-extracted patches [T × patch_dim].
inline Tensor forward_patches(Tape& tape, const Tensor& patches, const ParamStore& params, const ModelConfig& cfg) {
    auto x = embed(tape, patches, params, cfg);
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) x = encoder_block(tape, x, params, block_prefix(b), cfg);
    auto cls = slice(tape, x, 0, 0, 1);
    auto logits = affine(tape, cls, params.at("head.weight"), params.at("head.bias"));
    return reshape(tape, logits, {cfg.num_classes});
}

/// Logits [num_classes] for one image [C × H × W]. Softmax is left to the loss.
inline Tensor forward(Tape& tape, const Tensor& image, const ParamStore& params, const ModelConfig& cfg) {
    return forward_patches(tape, extract_patches(image, cfg), params, cfg);
}

// ---------------------------------------------------------------------------
// Config (de)serialization and checkpoints
// ---------------------------------------------------------------------------

using Json = nlohmann::ordered_json;

namespace detail {

template <typename Enum>
Enum parse_enum(const Json& j, const char* key, std::initializer_list<std::pair<const char*, Enum>> options) {
    const auto text = j.get<std::string>();
    for (const auto& [name, value] : options)
        if (text == name) return value;
    throw ConfigError(std::string("invalid value '") + text + "' for " + key);
}

inline void reject_unknown_keys(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
void read_field(const Json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

}  // namespace detail

inline Json to_json(const ModelConfig& cfg) {
    Json j;
    j["image_size"] = cfg.image_size;
    j["crop_size"] = cfg.crop_size;
    j["channels"] = cfg.channels;
    j["patch_size"] = cfg.patch_size;
    j["hidden_size"] = cfg.hidden_size;
    j["num_blocks"] = cfg.num_blocks;
    j["num_heads"] = cfg.num_heads;
    j["mlp_hidden"] = cfg.mlp_hidden;
    j["num_classes"] = cfg.num_classes;
    j["mode"] = to_string(cfg.mode);
    j["qmha_scheme"] = to_string(cfg.qmha_scheme);
    j["vqc_bias"] = cfg.vqc_bias;
    j["vqc_gradient"] = to_string(cfg.vqc_gradient);
    return j;
}

inline ModelConfig model_config_from_json(const Json& j) {
    detail::reject_unknown_keys(j,
                                {"image_size", "crop_size", "channels", "patch_size", "hidden_size", "num_blocks",
                                 "num_heads", "mlp_hidden", "num_classes", "mode", "qmha_scheme", "vqc_bias",
                                 "vqc_gradient"},
                                "model config");
    ModelConfig cfg;
    detail::read_field(j, "image_size", cfg.image_size);
    detail::read_field(j, "crop_size", cfg.crop_size);
    detail::read_field(j, "channels", cfg.channels);
    detail::read_field(j, "patch_size", cfg.patch_size);
    detail::read_field(j, "hidden_size", cfg.hidden_size);
    detail::read_field(j, "num_blocks", cfg.num_blocks);
    detail::read_field(j, "num_heads", cfg.num_heads);
    detail::read_field(j, "mlp_hidden", cfg.mlp_hidden);
    detail::read_field(j, "num_classes", cfg.num_classes);
    detail::read_field(j, "vqc_bias", cfg.vqc_bias);
    if (j.contains("mode"))
        cfg.mode = detail::parse_enum<Mode>(j["mode"], "mode", {{"classical", Mode::classical}, {"quantum", Mode::quantum}});
    if (j.contains("qmha_scheme"))
        cfg.qmha_scheme = detail::parse_enum<QmhaScheme>(
            j["qmha_scheme"], "qmha_scheme",
            {{"per_projection", QmhaScheme::per_projection}, {"split_halves", QmhaScheme::split_halves}});
    if (j.contains("vqc_gradient"))
        cfg.vqc_gradient = detail::parse_enum<qsim::GradientMethod>(
            j["vqc_gradient"], "vqc_gradient",
            {{"parameter_shift", qsim::GradientMethod::parameter_shift}, {"adjoint", qsim::GradientMethod::adjoint}});
    cfg.validate();
    return cfg;
}

struct Checkpoint {
    ModelConfig config;
    ParamStore params;
    Json meta;  // full meta.json contents
};

namespace detail {

inline void write_f64le(std::ostream& os, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(bytes), 8);
}

inline double read_f64le(const unsigned char* bytes) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptionError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Writes `meta.json` (config, registry listing, caller-supplied fields) and
/// `params.bin` (every tensor as little-endian real64, registry order).
inline void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg, const ParamStore& params,
                            const Json& extra = Json::object()) {
    std::filesystem::create_directories(dir);
    Json meta;
    meta["format"] = "qvit-checkpoint-v1";
    meta["config"] = to_json(cfg);
    Json registry = Json::array();
    for (const auto& e : params.entries()) registry.push_back({{"name", e.name}, {"shape", e.tensor.shape()}});
    meta["registry"] = std::move(registry);
    for (const auto& [key, value] : extra.items()) meta[key] = value;
    {
        std::ofstream out(dir / "meta.json", std::ios::binary | std::ios::trunc);
        out << meta.dump(2) << '\n';
    }
    std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
    for (const auto& e : params.entries())
        for (double v : e.tensor.values()) detail::write_f64le(bin, v);
    if (!bin) throw std::runtime_error("failed writing " + (dir / "params.bin").string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    Json meta;
    try {
        meta = Json::parse(detail::read_file(dir / "meta.json"));
    } catch (const nlohmann::json::parse_error& e) {
        throw CorruptionError("meta.json: " + std::string(e.what()));
    }
    if (meta.value("format", "") != "qvit-checkpoint-v1") throw CorruptionError("meta.json: unsupported format");
    auto cfg = model_config_from_json(meta.at("config"));
    auto params = init_params(cfg, 0);
    const auto& registry = meta.at("registry");
    if (registry.size() != params.size())
        throw CorruptionError("meta.json: registry lists " + std::to_string(registry.size()) + " tensors, config implies " +
                              std::to_string(params.size()));
    const auto blob = detail::read_file(dir / "params.bin");
    if (blob.size() != params.total_count() * 8)
        throw CorruptionError("params.bin: " + std::to_string(blob.size()) + " bytes, expected " +
                              std::to_string(params.total_count() * 8));
    std::size_t offset = 0;
    auto entries = params.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (registry[i].at("name").get<std::string>() != entries[i].name ||
            registry[i].at("shape").get<Shape>() != entries[i].tensor.shape())
            throw CorruptionError("meta.json: registry entry " + std::to_string(i) + " does not match config");
        auto values = entries[i].tensor.mutable_values();
        for (auto& v : values) {
            v = detail::read_f64le(reinterpret_cast<const unsigned char*>(blob.data()) + offset);
            offset += 8;
        }
    }
    return {cfg, std::move(params), std::move(meta)};
}

}  // namespace qvit
