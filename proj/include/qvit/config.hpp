#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "qvit/errors.hpp"
#include "qvit/model.hpp"
#include "qvit/train.hpp"

namespace qvit {

/// Top-level run configuration read by the command-line tool. Every field
/// has a default and unknown keys are rejected at every level.
struct RunConfig {
    ModelConfig model = ModelConfig::full();
    train::TrainConfig train;
    std::uint64_t seed = 0;
    std::string data;  // dataset directory; the --data flag takes precedence

    bool operator==(const RunConfig& o) const {
        return model == o.model && to_json(train) == to_json(o.train) && seed == o.seed && data == o.data;
    }
};

inline Json to_json(const RunConfig& c) {
    return Json{{"model", to_json(c.model)}, {"train", train::to_json(c.train)}, {"seed", c.seed}, {"data", c.data}};
}

inline RunConfig run_config_from_json(const Json& j) {
    detail::reject_unknown_keys(j, {"model", "train", "seed", "data"}, "config");
    RunConfig c;
    if (j.contains("model")) c.model = model_config_from_json(j["model"]);
    if (j.contains("train")) c.train = train::train_config_from_json(j["train"]);
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "data", c.data);
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
        return run_config_from_json(Json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
}

}  // namespace qvit
