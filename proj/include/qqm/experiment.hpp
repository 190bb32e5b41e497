#pragma once

// Experiment pipelines behind `qqm run` and `qqm compare`. Each run writes CSV
// tables, SVG plots and, last, manifest.json listing every file with its hash.

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "qqm/config.hpp"

namespace qqm {

inline constexpr const char* kManifestFile = "manifest.json";

struct RunOptions {
    std::filesystem::path out_dir;
    int threads = 1;
    bool strict_deterministic = false;
    std::ostream* log = nullptr; ///< progress lines; null for silence
};

struct RunSummary {
    std::filesystem::path out_dir;
    std::filesystem::path manifest;
    nlohmann::ordered_json metrics;
    std::vector<std::string> warnings;
};

/// `out_flag` if given, else $QQM_OUT/<name>, else ./qqm_runs/<name>.
std::filesystem::path resolve_output_dir(const ExperimentConfig& c, const std::optional<std::filesystem::path>& out_flag);

/// Runs the pipeline for c.kind. An existing output directory is reused only if it
/// holds a previous run (its manifest lists what gets replaced).
RunSummary run_experiment(const ExperimentConfig& c, const RunOptions& o);

struct SliceComparison {
    double t = 0.0;
    std::size_t bins = 0;
    double max_abs_diff = 0.0;
    double ks = 0.0;
    std::string ks_method; ///< "samples" or "binned"
};

struct CompareSummary {
    std::filesystem::path out_dir;
    std::vector<SliceComparison> slices;
};

/// Per-bin differences and KS statistics for every slice time the two runs share.
/// Throws ConfigError when shared slices are binned differently.
CompareSummary compare_runs(const std::filesystem::path& manifest_a, const std::filesystem::path& manifest_b,
                            const std::filesystem::path& out_dir);

/// Numeric columns of a CSV file by header name.
struct CsvColumns {
    std::vector<std::string> names;
    std::vector<std::vector<double>> values;

    const std::vector<double>& column(const std::string& name) const;
};
CsvColumns read_csv(const std::filesystem::path& path);

} // namespace qqm
