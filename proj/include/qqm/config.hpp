#pragma once

// Experiment configuration: a JSON document with a schema version, one experiment
// kind and the sections that kind uses. Unknown keys are errors, and every error
// names the file, line and key path.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qqm/qgan.hpp"
#include "qqm/qqm_train.hpp"
#include "qqm/quantile_model.hpp"
#include "qqm/sde_oracle.hpp"

namespace qqm {

inline constexpr int kConfigSchema = 1;

enum class ExperimentKind {
    TrainInitialQf,
    PropagateAnalytic,
    PropagateData,
    Sample,
    EulerMaruyama,
    QganTrain,
    ReorderAnalysis,
};

std::string to_string(ExperimentKind k);

/// Line numbers of every value in a JSON text, keyed by dotted path ("a.b[2].c").
class JsonLocator {
public:
    JsonLocator() = default;
    explicit JsonLocator(const std::string& text);

    /// Line of `path`, or of its nearest located ancestor; 0 if none.
    int line(const std::string& path) const;

private:
    std::map<std::string, int> lines_;
};

/// A JSON value with its path, for checked reads that report file:line.
class ConfigNode {
public:
    ConfigNode(const nlohmann::json* j, std::string path, const JsonLocator* loc, const std::string* file)
        : j_(j), path_(std::move(path)), loc_(loc), file_(file) {}

    const nlohmann::json& json() const { return *j_; }
    const std::string& path() const { return path_; }

    bool has(const std::string& key) const;
    ConfigNode at(const std::string& key) const;
    std::optional<ConfigNode> find(const std::string& key) const;
    ConfigNode element(std::size_t i) const;
    std::size_t size() const;

    double as_double() const;
    std::int64_t as_int() const;
    std::uint64_t as_uint() const;
    bool as_bool() const;
    std::string as_string() const;
    std::vector<double> as_doubles() const;

    double number(const std::string& key) const { return at(key).as_double(); }
    double number(const std::string& key, double fallback) const;
    std::int64_t integer(const std::string& key) const { return at(key).as_int(); }
    std::int64_t integer(const std::string& key, std::int64_t fallback) const;
    std::string string(const std::string& key) const { return at(key).as_string(); }
    std::string string(const std::string& key, const std::string& fallback) const;
    bool boolean(const std::string& key, bool fallback) const;

    /// Throws for any key outside `allowed`.
    void allow_only(std::initializer_list<std::string> allowed) const;
    void require_object() const;

    [[noreturn]] void fail(const std::string& message) const;
    [[noreturn]] void fail(const std::string& key, const std::string& message) const;

private:
    std::string child(const std::string& key) const;

    const nlohmann::json* j_;
    std::string path_;
    const JsonLocator* loc_;
    const std::string* file_;
};

struct GridAxis {
    double from = 0.0;
    double to = 1.0;
    int n = 2;
    std::vector<double> values() const { return linspace(from, to, static_cast<std::size_t>(n)); }
};

struct OptimizerConfig {
    int epochs = 1000;
    AdamSettings adam;
    int checkpoint_every = 0;
};

struct HistogramConfig {
    std::vector<double> slices{0.0, 0.25, 0.5};
    int bins = 40;
    std::optional<std::pair<double, double>> range; ///< default from the OU parameters
};

struct EulerMaruyamaConfig {
    double dt = 1e-3;
    std::size_t n_paths = 100000;
};

/// Where training samples come from.
struct DataSourceConfig {
    enum class Kind { EulerMaruyama, Normal, Csv };
    Kind kind = Kind::EulerMaruyama;
    std::size_t n = 100000;       ///< EM paths or normal draws
    double dt = 1e-3;             ///< EM step
    double mu = 0.0;              ///< normal
    double sigma = 1.0;           ///< normal
    std::filesystem::path path;   ///< csv
    std::string column;           ///< csv column; empty means the first
};

struct GeneratorConfig {
    GeneratorSpec spec;
    bool classical_fit = false; ///< readout and init angles from the classical fit
    std::string init = "identity"; ///< identity (paired sandwich blocks) or uniform
};

struct ReorderConfig {
    enum class Source { SingleDip, Model };
    Source source = Source::SingleDip;
    std::filesystem::path model;
    int grid_points = 200;
    double grid_bound = 0.995;
    double mu = 0.0;
    double sigma = 0.2;
    double flag_factor = 0.25;
};

struct ExperimentConfig {
    int schema = kConfigSchema;
    ExperimentKind kind = ExperimentKind::EulerMaruyama;
    std::string name;
    std::uint64_t seed = 0;

    std::filesystem::path source;   ///< config file, empty when parsed from text
    nlohmann::ordered_json snapshot; ///< the document as read, with CLI overrides applied

    SdeParams sde;
    GeneratorConfig generator;
    GeneratorConfig discriminator;
    BoundaryKind boundary = BoundaryKind::Floating;
    double boundary_time = 0.0;
    double pin_weight = 1.0;
    std::vector<double> pin_points;
    std::filesystem::path model; ///< initial model (propagate_data) or model to sample
    DataSourceConfig data;
    int target_points = 43;
    double target_time = 0.0;
    GridAxis grid_z{-0.95, 0.95, 21};
    GridAxis grid_t{0.0, 0.5, 20};
    LossConfig loss;
    OptimizerConfig optimizer;
    std::size_t n_samples = 100000;
    HistogramConfig histograms;
    EulerMaruyamaConfig euler_maruyama;
    QganConfig qgan;
    ReorderConfig reorder;
};

/// Parse and validate. `label` names the document in messages; relative file paths
/// resolve against `base_dir`. `seed_override` replaces the config's seed.
ExperimentConfig parse_config(const std::string& text, const std::string& label,
                              const std::filesystem::path& base_dir,
                              std::optional<std::uint64_t> seed_override = std::nullopt);
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<std::uint64_t> seed_override = std::nullopt);

} // namespace qqm
