#pragma once

// Experiment configuration files. The format is YAML with one mapping per
// section; see docs/config.md for every key and its default.

#include "lss/federation.hpp"
#include "lss/local_training.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace lss {

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& key, const std::string& message)
        : std::runtime_error(key.empty() ? message : key + ": " + message), key_path(key) {}

    std::string key_path;
};

struct AnalysisToggles {
    bool zeta = true;
    bool sigma = true;
    int sigma_draws = 32;
    bool bvcl = true;
    bool hessian = false;
    int hessian_iters = 20;
    int hessian_batch = 256;
};

struct OutputConfig {
    std::string dir;
    bool record_timing = false;  // wall-clock column in rounds.csv; breaks byte-identical reruns
};

struct ExperimentConfig {
    std::uint64_t master_seed = 0;
    FederationConfig federation;
    LocalConfig local;
    DataSetup data;
    ModelSetup model;
    AnalysisToggles analysis;
    OutputConfig output;

    /// Runs every nested validation and rewraps failures with their key path.
    void validate() const;
};

/// Parses YAML text, applies dotted-path overrides ("local.lambda_a=3"),
/// fills defaults and validates.
ExperimentConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {});
ExperimentConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Canonical YAML with every key spelled out. The output directory is left
/// out unless requested since it does not affect results.
std::string serialize_config(const ExperimentConfig& config, bool include_output_dir = false);

}  // namespace lss
