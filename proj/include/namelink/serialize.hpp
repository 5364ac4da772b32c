#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "namelink/datamodel.hpp"
#include "namelink/encoder.hpp"
#include "namelink/metrics.hpp"
#include "namelink/synthgen.hpp"
#include "namelink/trainer.hpp"

namespace namelink {

// JSON codecs for configs and pipeline artifacts. Missing keys keep the
// defaults, so config files only state what they change.
void apply_json(ModelConfig& cfg, const nlohmann::json& j);
void apply_json(TrainConfig& cfg, const nlohmann::json& j);
void apply_json(WorldConfig& cfg, const nlohmann::json& j);

nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const WorldConfig& cfg);

void save_splits(const SplitAssignment& splits, const std::filesystem::path& path);
SplitAssignment load_splits(const std::filesystem::path& path);

nlohmann::json report_to_json(const MetricsReport& report, const std::string& method,
                              const std::string& inference, const std::string& subset,
                              const std::string& split);
void save_report(const nlohmann::json& report, const std::filesystem::path& path);
nlohmann::json load_report(const std::filesystem::path& path);

// Stable 64-bit FNV-1a digest of a canonical JSON dump, as a hex string.
std::string config_hash(const nlohmann::json& j);

struct RunManifest {
    std::string command;
    std::string config_digest;
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    double wall_time_s = 0.0;
};

void save_run_manifest(const RunManifest& manifest, const std::filesystem::path& path);

}  // namespace namelink
