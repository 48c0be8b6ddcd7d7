#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qvit/errors.hpp"

namespace qvit::data {

using Json = nlohmann::ordered_json;

inline constexpr const char* kGeneratorVersion = "synthetic-jets-v1";
inline constexpr std::size_t kChannels = 3;  // Tracks, ECAL, HCAL
inline constexpr int kQuark = 0;
inline constexpr int kGluon = 1;

/// Knobs of the synthetic jet generator. Lengths are in pixels.
struct GeneratorParams {
    std::size_t image_size = 125;
    std::size_t hcal_factor = 5;  // HCAL cell edge in pixels
    double quark_multiplicity = 10.0;
    double gluon_multiplicity = 20.0;
    double quark_sigma = 5.0;
    double gluon_sigma = 12.0;
    double charged_fraction = 0.6;
    double energy_mean = 1.0;

    void validate() const {
        if (image_size == 0 || hcal_factor == 0 || image_size % hcal_factor != 0)
            throw ConfigError("image_size must be a positive multiple of hcal_factor");
        if (!(quark_multiplicity > 0 && gluon_multiplicity > 0 && quark_sigma > 0 && gluon_sigma > 0 &&
              energy_mean > 0 && charged_fraction >= 0 && charged_fraction <= 1))
            throw ConfigError("generator parameters out of range");
    }
};

inline Json to_json(const GeneratorParams& p) {
    return Json{{"image_size", p.image_size},
                {"hcal_factor", p.hcal_factor},
                {"quark_multiplicity", p.quark_multiplicity},
                {"gluon_multiplicity", p.gluon_multiplicity},
                {"quark_sigma", p.quark_sigma},
                {"gluon_sigma", p.gluon_sigma},
                {"charged_fraction", p.charged_fraction},
                {"energy_mean", p.energy_mean}};
}

inline GeneratorParams generator_params_from_json(const Json& j) {
    GeneratorParams p;
    if (!j.is_object()) throw ConfigError("generator params must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "image_size") p.image_size = value.get<std::size_t>();
            else if (key == "hcal_factor") p.hcal_factor = value.get<std::size_t>();
            else if (key == "quark_multiplicity") p.quark_multiplicity = value.get<double>();
            else if (key == "gluon_multiplicity") p.gluon_multiplicity = value.get<double>();
            else if (key == "quark_sigma") p.quark_sigma = value.get<double>();
            else if (key == "gluon_sigma") p.gluon_sigma = value.get<double>();
            else if (key == "charged_fraction") p.charged_fraction = value.get<double>();
            else if (key == "energy_mean") p.energy_mean = value.get<double>();
            else throw ConfigError("unknown key '" + key + "' in generator params");
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("bad value for '" + key + "': " + e.what());
        }
    }
    p.validate();
    return p;
}

struct JetSample {
    std::vector<float> image;  // [3 × size × size], channel-major
    int label = kQuark;
};

/// Sample `index` of the stream for `seed`. Even indices are quarks, odd
/// indices gluons; each sample depends only on (index, seed, params).
inline JetSample generate_sample(std::uint64_t index, std::uint64_t seed, const GeneratorParams& params) {
    params.validate();
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::mt19937_64 rng(seq);

    JetSample s;
    s.label = index % 2 == 0 ? kQuark : kGluon;
    const bool gluon = s.label == kGluon;
    const std::size_t n = params.image_size, plane = n * n;
    const std::size_t coarse = n / params.hcal_factor;

    std::poisson_distribution<int> multiplicity(gluon ? params.gluon_multiplicity : params.quark_multiplicity);
    std::normal_distribution<double> offset(0.0, gluon ? params.gluon_sigma : params.quark_sigma);
    std::exponential_distribution<double> energy(1.0 / params.energy_mean);
    std::bernoulli_distribution charged(params.charged_fraction);

    std::vector<double> tracks(plane, 0.0), ecal(plane, 0.0), hcal(coarse * coarse, 0.0);
    const int count = std::max(1, multiplicity(rng));
    const double center = 0.5 * static_cast<double>(n);
    auto to_pixel = [&](double v) {
        v = std::clamp(v, 0.0, static_cast<double>(n) - 1e-9);
        return static_cast<std::size_t>(v);
    };
    for (int k = 0; k < count; ++k) {
        const std::size_t y = to_pixel(center + offset(rng));
        const std::size_t x = to_pixel(center + offset(rng));
        const double e = energy(rng);
        if (charged(rng)) tracks[y * n + x] += e;
        ecal[y * n + x] += e;
        hcal[(y / params.hcal_factor) * coarse + x / params.hcal_factor] += e;
    }

    s.image.resize(kChannels * plane);
    for (std::size_t i = 0; i < plane; ++i) {
        s.image[i] = static_cast<float>(tracks[i]);
        s.image[plane + i] = static_cast<float>(ecal[i]);
        const std::size_t y = i / n, x = i % n;
        s.image[2 * plane + i] = static_cast<float>(hcal[(y / params.hcal_factor) * coarse + x / params.hcal_factor]);
    }
    return s;
}

inline std::vector<JetSample> generate(std::size_t n, std::uint64_t seed, const GeneratorParams& params = {}) {
    if (n < 2 || n % 2 != 0) throw ContractError("sample count must be even and at least 2, got " + std::to_string(n));
    std::vector<JetSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(i, seed, params));
    return out;
}

// ---------------------------------------------------------------------------
// Splits and preprocessing
// ---------------------------------------------------------------------------

struct IndexRange {
    std::size_t begin = 0, end = 0;
    std::size_t size() const { return end - begin; }
    bool operator==(const IndexRange&) const = default;
};

struct Splits {
    IndexRange train, val, test;
    bool operator==(const Splits&) const = default;
};

using SplitRatios = std::array<double, 3>;

/// 714,510 / 79,390 / 139,306 of 933,206.
inline constexpr SplitRatios kReferenceSplitRatios = {714510.0 / 933206.0, 79390.0 / 933206.0, 139306.0 / 933206.0};

/// Contiguous train|val|test ranges. Train and val sizes are floor(n·r); the
/// remainder goes to test. A 1e-6 guard absorbs ratios such as 2/3 whose
/// product with n lands just below an integer.
inline Splits split(std::size_t n, const SplitRatios& ratios) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(total - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
        throw ConfigError("split ratios must be non-negative and sum to 1");
    auto floor_part = [n](double r) {
        return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-6));
    };
    const std::size_t train = floor_part(ratios[0]), val = floor_part(ratios[1]);
    if (train + val >= n || train == 0 || val == 0)
        throw ConfigError("split of " + std::to_string(n) + " samples leaves an empty partition");
    return {{0, train}, {train, train + val}, {train + val, n}};
}

using ChannelMax = std::array<double, kChannels>;

/// log1p(x)/log1p(channel max) per channel; a channel whose max is 0 maps to zeros.
inline std::vector<double> preprocess(std::span<const float> image, const ChannelMax& channel_max) {
    const std::size_t plane = image.size() / kChannels;
    if (plane * kChannels != image.size()) throw DimensionError("image size is not a multiple of the channel count");
    std::vector<double> out(image.size(), 0.0);
    for (std::size_t c = 0; c < kChannels; ++c) {
        if (!(channel_max[c] > 0.0)) continue;
        const double denom = std::log1p(channel_max[c]);
        for (std::size_t i = c * plane; i < (c + 1) * plane; ++i)
            out[i] = std::log1p(static_cast<double>(image[i])) / denom;
    }
    return out;
}

inline void accumulate_channel_max(std::span<const float> image, ChannelMax& acc) {
    const std::size_t plane = image.size() / kChannels;
    for (std::size_t c = 0; c < kChannels; ++c)
        for (std::size_t i = c * plane; i < (c + 1) * plane; ++i)
            acc[c] = std::max(acc[c], static_cast<double>(image[i]));
}

// ---------------------------------------------------------------------------
// On-disk format: manifest.json + images.f32 (NCHW float32 LE) + labels.u8
// ---------------------------------------------------------------------------

struct DatasetManifest {
    std::size_t num_samples = 0;
    std::size_t height = 0, width = 0, channels = kChannels;
    std::string dtype = "f32le";
    std::string layout = "NCHW";
    std::string images_file = "images.f32";
    std::string labels_file = "labels.u8";
    std::uint64_t seed = 0;
    std::string generator_version = kGeneratorVersion;
    Json generator_params = Json::object();
    Splits splits;
    ChannelMax channel_max{};  // training split only

    std::size_t image_values() const { return channels * height * width; }
};

inline Json to_json(const DatasetManifest& m) {
    auto range = [](const IndexRange& r) { return Json{{"begin", r.begin}, {"end", r.end}}; };
    return Json{{"num_samples", m.num_samples},
                {"height", m.height},
                {"width", m.width},
                {"channels", m.channels},
                {"dtype", m.dtype},
                {"layout", m.layout},
                {"images_file", m.images_file},
                {"labels_file", m.labels_file},
                {"seed", m.seed},
                {"generator_version", m.generator_version},
                {"generator_params", m.generator_params},
                {"splits", {{"train", range(m.splits.train)}, {"val", range(m.splits.val)}, {"test", range(m.splits.test)}}},
                {"channel_max", m.channel_max}};
}

inline DatasetManifest manifest_from_json(const Json& j) {
    DatasetManifest m;
    auto field = [&](const char* key) -> const Json& {
        if (!j.contains(key)) throw CorruptionError("manifest: missing field '" + std::string(key) + "'");
        return j.at(key);
    };
    try {
        m.num_samples = field("num_samples").get<std::size_t>();
        m.height = field("height").get<std::size_t>();
        m.width = field("width").get<std::size_t>();
        m.channels = field("channels").get<std::size_t>();
        m.dtype = field("dtype").get<std::string>();
        m.layout = field("layout").get<std::string>();
        m.images_file = field("images_file").get<std::string>();
        m.labels_file = field("labels_file").get<std::string>();
        m.seed = field("seed").get<std::uint64_t>();
        m.generator_version = field("generator_version").get<std::string>();
        m.generator_params = j.value("generator_params", Json::object());
        const auto& s = field("splits");
        auto range = [&](const char* name) {
            return IndexRange{s.at(name).at("begin").get<std::size_t>(), s.at(name).at("end").get<std::size_t>()};
        };
        m.splits = {range("train"), range("val"), range("test")};
        m.channel_max = field("channel_max").get<ChannelMax>();
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("manifest: ") + e.what());
    }
    if (m.layout != "NCHW") throw CorruptionError("manifest: layout '" + m.layout + "' not supported (expected NCHW)");
    if (m.dtype != "f32le") throw CorruptionError("manifest: dtype '" + m.dtype + "' not supported (expected f32le)");
    if (m.channels != kChannels) throw CorruptionError("manifest: channels must be 3");
    const auto& sp = m.splits;
    if (sp.train.begin != 0 || sp.train.end != sp.val.begin || sp.val.end != sp.test.begin ||
        sp.test.end != m.num_samples || sp.train.size() == 0 || sp.val.size() == 0 || sp.test.size() == 0)
        throw CorruptionError("manifest: splits do not partition the samples");
    return m;
}

/// Streams samples to a dataset directory; finish() writes the manifest.
class DatasetWriter {
public:
    explicit DatasetWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
        images_.open(dir_ / manifest_.images_file, std::ios::binary | std::ios::trunc);
        labels_.open(dir_ / manifest_.labels_file, std::ios::binary | std::ios::trunc);
        if (!images_ || !labels_) throw std::runtime_error("cannot write dataset files in " + dir_.string());
    }

    void append(const JetSample& s) {
        if (s.label != kQuark && s.label != kGluon) throw RangeError("label must be 0 or 1");
        if (per_sample_max_.empty()) {
            const std::size_t plane = s.image.size() / kChannels;
            side_ = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(plane))));
            if (side_ * side_ * kChannels != s.image.size()) throw DimensionError("image is not 3 × N × N");
        } else if (s.image.size() != kChannels * side_ * side_) {
            throw DimensionError("image size differs from earlier samples");
        }
        for (float v : s.image) {
            auto bits = std::bit_cast<std::uint32_t>(v);
            char bytes[4];
            for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>(bits >> (8 * i));
            images_.write(bytes, 4);
        }
        labels_.put(static_cast<char>(s.label));
        ChannelMax mx{};
        accumulate_channel_max(s.image, mx);
        per_sample_max_.push_back(mx);
    }

    DatasetManifest finish(const SplitRatios& ratios, std::uint64_t seed, const Json& generator_params = Json::object()) {
        images_.close();
        labels_.close();
        if (!images_ || !labels_) throw std::runtime_error("failed writing dataset files in " + dir_.string());
        manifest_.num_samples = per_sample_max_.size();
        manifest_.height = manifest_.width = side_;
        manifest_.seed = seed;
        manifest_.generator_params = generator_params;
        manifest_.splits = split(manifest_.num_samples, ratios);
        manifest_.channel_max = {};
        for (std::size_t i = manifest_.splits.train.begin; i < manifest_.splits.train.end; ++i)
            for (std::size_t c = 0; c < kChannels; ++c)
                manifest_.channel_max[c] = std::max(manifest_.channel_max[c], per_sample_max_[i][c]);
        std::ofstream out(dir_ / "manifest.json", std::ios::binary | std::ios::trunc);
        out << to_json(manifest_).dump(2) << '\n';
        return manifest_;
    }

private:
    std::filesystem::path dir_;
    std::ofstream images_, labels_;
    DatasetManifest manifest_;
    std::vector<ChannelMax> per_sample_max_;
    std::size_t side_ = 0;
};

inline DatasetManifest write_dataset(std::span<const JetSample> samples, const std::filesystem::path& dir,
                                     const SplitRatios& ratios, std::uint64_t seed,
                                     const Json& generator_params = Json::object()) {
    DatasetWriter writer(dir);
    for (const auto& s : samples) writer.append(s);
    return writer.finish(ratios, seed, generator_params);
}

/// Read access to a dataset directory. Images are read lazily; labels are
/// loaded eagerly. Safe for concurrent use.
class DatasetReader {
public:
    explicit DatasetReader(const std::filesystem::path& dir) : dir_(dir) {
        std::ifstream in(dir / "manifest.json", std::ios::binary);
        if (!in) throw CorruptionError("manifest.json not found in " + dir.string());
        try {
            manifest_ = manifest_from_json(Json::parse(in));
        } catch (const nlohmann::json::parse_error& e) {
            throw CorruptionError(std::string("manifest: ") + e.what());
        }
        const auto images_path = dir / manifest_.images_file, labels_path = dir / manifest_.labels_file;
        if (!std::filesystem::exists(images_path)) throw CorruptionError("images_file missing: " + images_path.string());
        if (!std::filesystem::exists(labels_path)) throw CorruptionError("labels_file missing: " + labels_path.string());
        const auto expected_images = manifest_.num_samples * manifest_.image_values() * 4;
        if (std::filesystem::file_size(images_path) != expected_images)
            throw CorruptionError("images_file: " + std::to_string(std::filesystem::file_size(images_path)) +
                                  " bytes, manifest implies " + std::to_string(expected_images));
        if (std::filesystem::file_size(labels_path) != manifest_.num_samples)
            throw CorruptionError("labels_file: " + std::to_string(std::filesystem::file_size(labels_path)) +
                                  " bytes, manifest implies " + std::to_string(manifest_.num_samples));
        std::ifstream lab(labels_path, std::ios::binary);
        labels_.resize(manifest_.num_samples);
        std::size_t ones = 0;
        for (auto& l : labels_) {
            const int v = lab.get();
            if (v != 0 && v != 1) throw CorruptionError("labels_file: label value " + std::to_string(v) + " not in {0,1}");
            l = v;
            ones += static_cast<std::size_t>(v);
        }
        const std::size_t zeros = manifest_.num_samples - ones;
        if ((zeros > ones ? zeros - ones : ones - zeros) > 1)
            throw CorruptionError("labels_file: class counts " + std::to_string(zeros) + "/" + std::to_string(ones) +
                                  " are not balanced");
        images_.open(images_path, std::ios::binary);
    }

    const DatasetManifest& manifest() const { return manifest_; }
    std::size_t size() const { return manifest_.num_samples; }
    int label(std::size_t i) const { return labels_.at(i); }
    std::span<const int> labels() const { return labels_; }

    std::vector<float> image(std::size_t i) const {
        if (i >= size()) throw RangeError("sample index " + std::to_string(i) + " out of range");
        const std::size_t count = manifest_.image_values();
        std::vector<unsigned char> raw(count * 4);
        {
            std::lock_guard lock(mutex_);
            images_.seekg(static_cast<std::streamoff>(i * count * 4));
            images_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
            if (!images_) throw CorruptionError("images_file: short read at sample " + std::to_string(i));
        }
        std::vector<float> out(count);
        for (std::size_t k = 0; k < count; ++k) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[k * 4 + b]) << (8 * b);
            out[k] = std::bit_cast<float>(bits);
        }
        return out;
    }

    std::vector<double> preprocessed(std::size_t i) const { return preprocess(image(i), manifest_.channel_max); }

private:
    std::filesystem::path dir_;
    DatasetManifest manifest_;
    std::vector<int> labels_;
    mutable std::ifstream images_;
    mutable std::mutex mutex_;
};

inline DatasetReader read_dataset(const std::filesystem::path& dir) { return DatasetReader(dir); }

/// Energy-weighted mean squared distance from the image center on one channel.
inline double radial_second_moment(std::span<const float> image, std::size_t channel = 1) {
    const std::size_t plane = image.size() / kChannels;
    const auto n = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(plane))));
    const double center = 0.5 * static_cast<double>(n);
    double weighted = 0.0, total = 0.0;
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double e = image[channel * plane + y * n + x];
            const double dy = static_cast<double>(y) + 0.5 - center, dx = static_cast<double>(x) + 0.5 - center;
            weighted += e * (dx * dx + dy * dy);
            total += e;
        }
    return total > 0.0 ? weighted / total : 0.0;
}

}  // namespace qvit::data
