#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "m3bat/data.hpp"
#include "m3bat/evaluation.hpp"
#include "m3bat/model.hpp"

namespace m3bat {

// Full experiment configuration as read from JSON. Validation is strict:
// unknown keys are rejected before any computation starts.
struct RunConfig {
    ExperimentConfig experiment;
    std::string out_dir;

    struct DataPaths {
        std::string source;
        std::vector<std::string> targets;
        std::string map;
    };
    std::optional<DataPaths> data;   // exactly one of data / synth
    std::optional<SynthSpec> synth;
};

SynthSpec parse_synth_spec(const nlohmann::json& j);
nlohmann::json synth_spec_to_json(const SynthSpec& spec);

ArchitectureSpec parse_architecture(const nlohmann::json& j);

RunConfig parse_run_config(const nlohmann::json& j);

// Throws SchemaError when j contains a key outside `allowed`.
void require_known_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                        const std::string& where);

}  // namespace m3bat
