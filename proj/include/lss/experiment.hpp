#pragma once

// Command implementations behind the `lss` executable.

#include "lss/analysis.hpp"
#include "lss/config.hpp"
#include "lss/federation.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace lss {

struct RunArtifacts {
    ExperimentResult result;
    PartitionPlan plan;
    Report diagnostics;
};

/// Builds the federation, runs every round and computes the diagnostics.
RunArtifacts execute(const ExperimentConfig& config);

/// Writes rounds.csv, diagnostics.txt, final.lssw, config.yaml and
/// partition.json into `dir`. Files are staged under temporary names and
/// renamed at the end; on failure nothing new is left behind.
void write_run_outputs(const std::filesystem::path& dir, const ExperimentConfig& config,
                       const RunArtifacts& artifacts);

/// Output file names.
inline constexpr const char* kRoundsFile = "rounds.csv";
inline constexpr const char* kDiagnosticsFile = "diagnostics.txt";
inline constexpr const char* kCheckpointFile = "final.lssw";
inline constexpr const char* kConfigSnapshotFile = "config.yaml";
inline constexpr const char* kPartitionFile = "partition.json";

int cmd_run(const std::filesystem::path& config_path, const std::vector<std::string>& overrides, std::ostream& out,
            std::ostream& err);

/// One grid axis, "section.key=v1,v2,...".
struct SweepAxis {
    std::string key;
    std::vector<std::string> values;
};

SweepAxis parse_sweep_axis(const std::string& text);

/// Cartesian grid over the axes (first axis varies slowest). Each cell runs in
/// <output.dir>/cell_NNN; summary.csv lists the cell parameters, the final
/// global accuracy and a status column. Failing cells are recorded and the
/// sweep continues; the exit code is nonzero if any cell failed.
int cmd_sweep(const std::filesystem::path& config_path, const std::vector<SweepAxis>& axes,
              const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err);

}  // namespace lss
