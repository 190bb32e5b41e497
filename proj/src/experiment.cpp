#include "qqm/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "qqm/artifacts.hpp"
#include "qqm/errors.hpp"
#include "qqm/random.hpp"
#include "qqm/svg.hpp"

namespace qqm {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// Sub-streams of the run seed.
namespace stream {
constexpr std::uint64_t kReference = 1; // Euler-Maruyama paths / training samples
constexpr std::uint64_t kInit = 2;      // initial circuit parameters
constexpr std::uint64_t kSampling = 3;  // latent draws for generated samples, one child per slice
constexpr std::uint64_t kData = 4;      // synthetic qGAN data
} // namespace stream

// ---------------------------------------------------------------------------
// CSV input

const std::vector<double>& CsvColumns::column(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) {
            return values[i];
        }
    }
    throw ConfigError("CSV has no column '" + name + "'");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_number(const std::string& s, const fs::path& path, std::size_t line) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && *b == ' ') {
        ++b;
    }
    if (b < e && *b == '+') {
        ++b;
    }
    const auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e) {
        throw ConfigError(path.string() + ":" + std::to_string(line) + ": not a number: '" + s + "'");
    }
    return v;
}

} // namespace

CsvColumns read_csv(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    CsvColumns c;
    if (!std::getline(in, line)) {
        throw ConfigError(path.string() + ": empty CSV file");
    }
    c.names = split_csv_line(line);
    c.values.resize(c.names.size());
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty() || line == "\r") {
            continue;
        }
        const auto cells = split_csv_line(line);
        if (cells.size() != c.names.size()) {
            throw ConfigError(path.string() + ":" + std::to_string(n) + ": expected " +
                              std::to_string(c.names.size()) + " cells, found " + std::to_string(cells.size()));
        }
        for (std::size_t i = 0; i < cells.size(); ++i) {
            c.values[i].push_back(parse_number(cells[i], path, n));
        }
    }
    return c;
}

fs::path resolve_output_dir(const ExperimentConfig& c, const std::optional<fs::path>& out_flag) {
    if (out_flag) {
        return *out_flag;
    }
    const char* env = std::getenv("QQM_OUT");
    const fs::path root = env && *env ? fs::path(env) : fs::path("qqm_runs");
    return root / c.name;
}

namespace {

// ---------------------------------------------------------------------------
// Output directory and manifest

/// Clears a previous run from `dir` (only files its manifest lists) and refuses
/// directories holding anything else.
void prepare_output_dir(const fs::path& dir) {
    if (fs::exists(dir) && !fs::is_directory(dir)) {
        throw ConfigError("output path " + dir.string() + " exists and is not a directory");
    }
    fs::create_directories(dir);
    std::set<std::string> owned;
    const fs::path manifest = dir / kManifestFile;
    if (fs::exists(manifest)) {
        try {
            const auto j = nlohmann::json::parse(read_file(manifest));
            for (const auto& a : j.at("artifacts")) {
                owned.insert(a.at("file").get<std::string>());
            }
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(manifest.string() + " is not a qqm manifest; refusing to reuse " + dir.string());
        }
        owned.insert(kManifestFile);
    }
    std::vector<fs::path> remove;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        const bool stale_tmp = name.size() > 4 && name.ends_with(".tmp") && owned.count(name.substr(0, name.size() - 4));
        if (!owned.count(name) && !stale_tmp) {
            throw ConfigError("output directory " + dir.string() + " contains '" + name +
                              "', which no previous run manifest lists; choose an empty directory");
        }
        remove.push_back(e.path());
    }
    for (const auto& p : remove) {
        fs::remove_all(p);
    }
}

struct HistogramEntry {
    double t = 0.0;
    std::string file;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t bins = 0;
    std::size_t n_samples = 0;
};

class Timer {
public:
    Timer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

class RunWriter {
public:
    RunWriter(const ExperimentConfig& c, const RunOptions& o) : c_(c), o_(o) { prepare_output_dir(o.out_dir); }

    void csv(const std::string& file, const Csv& t) { write(file, t.str()); }
    void svg(const std::string& file, const std::string& s) { write(file, s); }
    void json(const std::string& file, const ojson& j) { write(file, j.dump(2) + "\n"); }

    void histogram(const HistogramEntry& h) { histograms_.push_back(h); }
    void samples(const std::string& file, std::vector<std::pair<double, std::string>> columns) {
        samples_file_ = file;
        sample_columns_ = std::move(columns);
    }
    void timing(const std::string& stage, double s) { timings_[stage] = s; }
    void log(const std::string& line) const {
        if (o_.log) {
            *o_.log << line << std::endl;
        }
    }

    ojson metrics;
    std::vector<std::string> warnings;

    RunSummary finish(double total_seconds) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(o_.out_dir)) {
            const auto name = e.path().filename().string();
            if (name != kManifestFile && e.is_regular_file()) {
                files.push_back(name);
            }
        }
        std::sort(files.begin(), files.end());
        ojson m;
        m["format"] = "qqm-manifest";
        m["version"] = 1;
        m["name"] = c_.name;
        m["kind"] = to_string(c_.kind);
        m["config_path"] = c_.source.empty() ? std::string() : fs::absolute(c_.source).lexically_normal().string();
        const std::string canonical = c_.snapshot.dump();
        m["config_sha1"] = git_blob_sha1(canonical);
        m["config"] = c_.snapshot;
        m["seed"] = c_.seed;
        m["threads"] = o_.threads;
        m["strict_deterministic"] = o_.strict_deterministic;
        ojson arts = ojson::array();
        for (const auto& f : files) {
            const std::string bytes = read_file(o_.out_dir / f);
            arts.push_back(ojson{{"file", f}, {"bytes", bytes.size()}, {"sha1", git_blob_sha1(bytes)}});
        }
        m["artifacts"] = arts;
        ojson hs = ojson::array();
        for (const auto& h : histograms_) {
            hs.push_back(ojson{{"t", h.t},
                               {"file", h.file},
                               {"column", "generated"},
                               {"lo", h.lo},
                               {"hi", h.hi},
                               {"bins", h.bins},
                               {"n_samples", h.n_samples}});
        }
        m["histograms"] = hs;
        if (!samples_file_.empty()) {
            ojson cols = ojson::array();
            for (const auto& [t, name] : sample_columns_) {
                cols.push_back(ojson{{"t", t}, {"column", name}});
            }
            m["samples"] = ojson{{"file", samples_file_}, {"columns", cols}};
        } else {
            m["samples"] = nullptr;
        }
        ojson timings;
        for (const auto& [k, v] : timings_) {
            timings[k] = v;
        }
        timings["total_s"] = total_seconds;
        m["timings_s"] = timings;
        m["metrics"] = metrics;
        m["warnings"] = warnings;
        write_file_atomic(o_.out_dir / kManifestFile, m.dump(2) + "\n");
        return {o_.out_dir, o_.out_dir / kManifestFile, metrics, warnings};
    }

    const fs::path& dir() const { return o_.out_dir; }

private:
    void write(const std::string& file, const std::string& content) { write_file_atomic(o_.out_dir / file, content); }

    const ExperimentConfig& c_;
    const RunOptions& o_;
    std::vector<HistogramEntry> histograms_;
    std::string samples_file_;
    std::vector<std::pair<double, std::string>> sample_columns_;
    std::map<std::string, double> timings_;
};

// ---------------------------------------------------------------------------
// Shared pieces

std::string slice_tag(double t) { return "t" + format_double(t); }

std::pair<double, double> histogram_range(const ExperimentConfig& c) {
    return c.histograms.range ? *c.histograms.range : default_histogram_range(c.sde);
}

/// One slice: generated samples against an optional sample reference and an optional
/// analytic density.
struct SliceData {
    double t = 0.0;
    std::vector<double> generated;
    std::vector<double> reference;
    bool analytic = false;
};

struct SliceStats {
    double max_bin_diff = std::numeric_limits<double>::quiet_NaN();
    double ks_analytic = std::numeric_limits<double>::quiet_NaN();
    double ks_reference = std::numeric_limits<double>::quiet_NaN();
};

SliceStats write_histogram(RunWriter& w, const SliceData& s, const SdeParams& p, std::pair<double, double> range,
                           int bins, svg::Panel* panel, svg::Panel* diff_panel, const std::string& generated_label,
                           const std::string& reference_label) {
    const auto [lo, hi] = range;
    const auto nb = static_cast<std::size_t>(bins);
    const Histogram hg = histogram(s.generated, lo, hi, nb);
    std::optional<Histogram> hr;
    if (!s.reference.empty()) {
        hr = histogram(s.reference, lo, hi, nb);
    }
    std::vector<double> mass;
    if (s.analytic) {
        mass = analytic_bin_mass(p, s.t, lo, hi, nb);
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    Csv csv({"bin_lo", "bin_hi", "generated", "reference", "analytic", "generated_minus_reference"});
    SliceStats st;
    std::vector<double> diff(nb, nan);
    for (std::size_t i = 0; i < nb; ++i) {
        const double r = hr ? hr->normalized[i] : nan;
        if (hr) {
            diff[i] = hg.normalized[i] - r;
            st.max_bin_diff = std::isnan(st.max_bin_diff) ? std::abs(diff[i]) : std::max(st.max_bin_diff, std::abs(diff[i]));
        }
        csv.row({hg.edge(i), i + 1 == nb ? hi : hg.edge(i + 1), hg.normalized[i], r, s.analytic ? mass[i] : nan,
                 diff[i]});
    }
    const std::string file = "hist_" + slice_tag(s.t) + ".csv";
    w.csv(file, csv);
    w.histogram({s.t, file, lo, hi, nb, s.generated.size()});
    if (s.analytic) {
        st.ks_analytic = ks_statistic(s.generated, [&](double x) { return analytic_cdf(p, x, s.t); });
    }
    if (!s.reference.empty()) {
        st.ks_reference = ks_statistic(s.generated, s.reference);
    }
    if (panel) {
        panel->title = "t = " + format_double(s.t);
        panel->xlabel = "x";
        panel->ylabel = "fraction of samples";
        panel->bars.push_back({generated_label, lo, hg.width(), hg.normalized});
        if (hr) {
            panel->bars.push_back({reference_label, lo, hg.width(), hr->normalized});
        }
        if (s.analytic) {
            svg::Line l{"analytic", {}, {}, false};
            for (std::size_t i = 0; i < nb; ++i) {
                l.x.push_back(hg.edge(i) + 0.5 * hg.width());
                l.y.push_back(mass[i]);
            }
            panel->lines.push_back(l);
        }
    }
    if (diff_panel && hr) {
        diff_panel->title = "t = " + format_double(s.t);
        diff_panel->xlabel = "x";
        diff_panel->ylabel = generated_label + " - " + reference_label;
        diff_panel->bars.push_back({"difference", lo, hg.width(), diff});
    }
    return st;
}

void write_samples(RunWriter& w, const std::vector<SliceData>& slices) {
    std::vector<std::string> cols;
    std::vector<std::pair<double, std::string>> meta;
    std::size_t n = 0;
    for (const auto& s : slices) {
        cols.push_back("x_" + slice_tag(s.t));
        meta.emplace_back(s.t, cols.back());
        n = std::max(n, s.generated.size());
    }
    Csv csv(cols);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<CsvCell> row;
        for (const auto& s : slices) {
            row.emplace_back(i < s.generated.size() ? s.generated[i] : nan);
        }
        csv.row(row);
    }
    w.csv("samples.csv", csv);
    w.samples("samples.csv", meta);
}

void write_history(RunWriter& w, const std::vector<HistoryRow>& h) {
    Csv csv({"epoch", "total", "data", "sde", "pin"});
    svg::Line total{"total", {}, {}, false};
    for (const auto& r : h) {
        csv.row({std::int64_t{r.epoch}, r.total, r.data, r.sde, r.pin});
        total.x.push_back(r.epoch);
        total.y.push_back(r.total);
    }
    w.csv("history.csv", csv);
    svg::Panel p{"training loss", "epoch", "loss", {}, {total}, true};
    w.svg("loss.svg", svg::render({p}));
}

Eigen::VectorXd initial_parameters(const Generator& g, const GeneratorConfig& gc, std::uint64_t seed) {
    const auto s = derive_seed(seed, stream::kInit);
    return gc.init == "identity" ? g.initial_theta(s) : g.uniform_theta(s);
}

TrainSettings train_settings(const ExperimentConfig& c, const RunOptions& o, RunWriter& w) {
    TrainSettings ts;
    ts.epochs = c.optimizer.epochs;
    ts.adam = c.optimizer.adam;
    ts.eval.threads = o.threads;
    ts.eval.strict_deterministic = o.strict_deterministic;
    ts.checkpoint_every = c.optimizer.checkpoint_every;
    ts.checkpoint_path = (o.out_dir / "checkpoint.json").string();
    const int every = std::max(1, c.optimizer.epochs / 20);
    ts.on_epoch = [&w, every](const HistoryRow& r) {
        if (r.epoch % every == 0) {
            w.log("epoch " + std::to_string(r.epoch) + "  loss " + format_double(r.total));
        }
        return true;
    };
    return ts;
}

void em_reference(const ExperimentConfig& c, std::span<const double> times, std::size_t n, double dt, int threads,
                  std::vector<SliceData>& out) {
    const auto sets = euler_maruyama(c.sde, dt, times, n, derive_seed(c.seed, stream::kReference), threads);
    for (std::size_t k = 0; k < sets.size(); ++k) {
        out[k].reference = sets[k].values;
    }
}

std::vector<double> generated_samples(const Generator& g, const Eigen::VectorXd& theta, double t, std::size_t n,
                                      std::uint64_t seed, std::size_t slice, int threads) {
    return g.sample(theta, t, n, derive_seed(derive_seed(seed, stream::kSampling), slice), threads);
}

void slice_metrics(ojson& m, const std::vector<SliceData>& slices, const std::vector<SliceStats>& stats) {
    ojson arr = ojson::array();
    std::optional<double> worst_bin;
    for (std::size_t k = 0; k < slices.size(); ++k) {
        ojson e{{"t", slices[k].t}};
        if (!std::isnan(stats[k].max_bin_diff)) {
            e["max_bin_diff"] = stats[k].max_bin_diff;
            worst_bin = std::max(worst_bin.value_or(0.0), stats[k].max_bin_diff);
        }
        if (!std::isnan(stats[k].ks_analytic)) {
            e["ks_analytic"] = stats[k].ks_analytic;
        }
        if (!std::isnan(stats[k].ks_reference)) {
            e["ks_reference"] = stats[k].ks_reference;
        }
        arr.push_back(e);
    }
    m["slices"] = arr;
    if (worst_bin) {
        m["max_bin_diff"] = *worst_bin;
    }
}

// ---------------------------------------------------------------------------
// Pipelines

void run_euler_maruyama(const ExperimentConfig& c, const RunOptions& o, RunWriter& w) {
    Timer t;
    const auto& ts = c.histograms.slices;
    const auto sets =
        euler_maruyama(c.sde, c.euler_maruyama.dt, ts, c.euler_maruyama.n_paths, derive_seed(c.seed, stream::kReference),
                       o.threads);
    w.timing("euler_maruyama_s", t.seconds());
    std::vector<SliceData> slices;
    Csv moments({"t", "n", "mean", "variance", "analytic_mean", "analytic_variance", "se_mean", "se_variance",
                 "z_mean", "z_variance"});
    ojson mm = ojson::array();
    double worst = 0.0;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        slices.push_back({ts[k], sets[k].values, {}, c.sde.sigma > 0.0});
        const Moments s = sample_moments(sets[k].values);
        const double n = static_cast<double>(sets[k].values.size());
        const double am = ou_mean(c.sde, ts[k]);
        const double av = ou_variance(c.sde, ts[k]);
        const double se_m = std::sqrt(av / n);
        const double se_v = av * std::sqrt(2.0 / (n - 1.0));
        const double zm = se_m > 0 ? (s.mean - am) / se_m : 0.0;
        const double zv = se_v > 0 ? (s.variance - av) / se_v : 0.0;
        moments.row({ts[k], static_cast<std::int64_t>(n), s.mean, s.variance, am, av, se_m, se_v, zm, zv});
        mm.push_back(ojson{{"t", ts[k]}, {"z_mean", zm}, {"z_variance", zv}});
        worst = std::max({worst, std::abs(zm), std::abs(zv)});
    }
    w.csv("moments.csv", moments);
    std::vector<svg::Panel> panels(slices.size());
    std::vector<SliceStats> stats;
    for (std::size_t k = 0; k < slices.size(); ++k) {
        stats.push_back(write_histogram(w, slices[k], c.sde, histogram_range(c), c.histograms.bins, &panels[k], nullptr,
                                        "Euler-Maruyama", ""));
    }
    w.svg("hist.svg", svg::render(panels, 3, "Euler-Maruyama samples"));
    write_samples(w, slices);
    w.metrics["moments"] = mm;
    w.metrics["max_abs_standard_error_units"] = worst;
    slice_metrics(w.metrics, slices, stats);
}

std::vector<double> load_data(const ExperimentConfig& c, const RunOptions& o, double t) {
    const auto& d = c.data;
    switch (d.kind) {
    case DataSourceConfig::Kind::EulerMaruyama: {
        const std::vector<double> times{t};
        return euler_maruyama(c.sde, d.dt, times, d.n, derive_seed(c.seed, stream::kReference), o.threads)[0].values;
    }
    case DataSourceConfig::Kind::Normal: {
        Rng r(derive_seed(c.seed, stream::kData));
        std::vector<double> v(d.n);
        for (auto& x : v) {
            x = d.mu + d.sigma * r.normal();
        }
        return v;
    }
    case DataSourceConfig::Kind::Csv: {
        const CsvColumns csv = read_csv(d.path);
        const auto& col = d.column.empty() ? csv.values.at(0) : csv.column(d.column);
        std::vector<double> v;
        for (double x : col) {
            if (!std::isfinite(x)) {
                throw ConfigError(d.path.string() + ": data column holds a non-finite value");
            }
            v.push_back(x);
        }
        if (v.size() < 2) {
            throw ConfigError(d.path.string() + ": need at least two data values");
        }
        return v;
    }
    }
    return {};
}

void run_train_initial(const ExperimentConfig& c, const RunOptions& o, RunWriter& w) {
    Timer t;
    const std::vector<double> data = load_data(c, o, c.target_time);
    w.timing("data_s", t.seconds());
    const DataTargets targets = prepare_quantile_targets(data, c.target_points, c.target_time);
    Csv tcsv({"z", "q"});
    for (std::size_t i = 0; i < targets.z.size(); ++i) {
        tcsv.row({targets.z[i], targets.q[i]});
    }
    w.csv("targets.csv", tcsv);

    GeneratorSpec spec = c.generator.spec;
    if (c.generator.classical_fit) {
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < targets.z.size(); ++i) {
            pts.emplace_back(targets.z[i], targets.q[i]);
        }
        const InitFit fit = classical_init_fit(pts, spec.z_map, spec.n_qubits);
        spec.init_angles = fit.init_angles;
        spec.costs = {fit.cost()};
        spec.validate();
        w.metrics["init_fit_rms"] = fit.residual_rms;
        w.metrics["init_fit_condition"] = fit.condition_number;
        if (fit.rank_deficient) {
            w.warnings.push_back("classical initialization basis is rank deficient (minimum-norm fit used)");
        }
    }
    const Generator g(spec);
    TrainProblem prob;
    prob.generator = &g;
    prob.data = targets;
    prob.params = c.sde;
    const Eigen::VectorXd theta0 = initial_parameters(g, c.generator, c.seed);
    w.metrics["initial_data_loss"] = evaluate_loss(prob, theta0, {false}).data;

    t = Timer();
    w.log("training " + std::to_string(g.parameter_count()) + " parameters for " + std::to_string(c.optimizer.epochs) +
          " epochs");
    const TrainResult res = train(prob, theta0, train_settings(c, o, w));
    w.timing("train_s", t.seconds());
    write_history(w, res.history);
    const LossValue fin = evaluate_loss(prob, res.theta, {false});

    const FittedModel model(g, res.theta, {c.seed, c.optimizer.epochs, fin.total, to_string(c.kind)});
    w.json("model.json", model_to_json(model));

    Csv qcsv({"z", "model", "analytic"});
    svg::Line lm{"model", {}, {}, false}, la{"analytic", {}, {}, true}, lt{"targets", {}, {}, true};
    for (double z : linspace(-0.999, 0.999, 401)) {
        const double v = model.value(z, c.target_time);
        const double a = analytic_qf(c.sde, z, c.target_time);
        qcsv.row({z, v, a});
        lm.x.push_back(z);
        lm.y.push_back(v);
        la.x.push_back(z);
        la.y.push_back(a);
    }
    lt.x = targets.z;
    lt.y = targets.q;
    w.csv("quantile.csv", qcsv);
    w.svg("quantile.svg", svg::render({svg::Panel{"quantile function", "z", "x", {}, {lm, la, lt}, false}}));

    t = Timer();
    std::vector<SliceData> slices{{c.target_time, generated_samples(g, res.theta, c.target_time, c.n_samples, c.seed, 0, o.threads), data, true}};
    w.timing("sampling_s", t.seconds());
    std::vector<svg::Panel> panels(1), diffs(1);
    const SliceStats st = write_histogram(w, slices[0], c.sde, histogram_range(c), c.histograms.bins, &panels[0],
                                          &diffs[0], "model", "data");
    w.svg("hist.svg", svg::render(panels, 1, "generated vs data"));
    w.svg("hist_diff.svg", svg::render(diffs, 1, "bin difference"));
    write_samples(w, slices);

    w.metrics["parameters"] = g.parameter_count();
    w.metrics["final_data_loss"] = fin.data;
    w.metrics["best_epoch"] = res.best_epoch;
    w.metrics["ks_analytic"] = st.ks_analytic;
    w.metrics["ks_data"] = st.ks_reference;
    w.metrics["max_bin_diff"] = st.max_bin_diff;
}

void run_propagate(const ExperimentConfig& c, const RunOptions& o, RunWriter& w) {
    BoundaryMode b;
    b.kind = c.boundary;
    b.time = c.boundary_time;
    b.pin_points = c.pin_points;
    b.pin_weight = c.pin_weight;
    if (c.kind == ExperimentKind::PropagateData) {
        auto m = std::make_shared<const FittedModel>(load_model(c.model.string()));
        if (m->generator().has_time()) {
            throw ConfigError("initial_model must be a fixed-time model (no t_map)");
        }
        b.u0 = InitialProfile::from_model(m, 0.0);
        w.metrics["initial_model"] = fs::absolute(c.model).lexically_normal().string();
    } else {
        b.u0 = InitialProfile::analytic(c.sde, c.boundary_time);
    }
    const Generator g(c.generator.spec, b);
    TrainProblem prob;
    prob.generator = &g;
    prob.grid = TrainingGrid{c.grid_z.values(), c.grid_t.values()};
    prob.params = c.sde;
    prob.loss = c.loss;
    if (c.boundary == BoundaryKind::Pinned) {
        prob.loss.data_weight = 0.0;
    }
    const Eigen::VectorXd theta0 = initial_parameters(g, c.generator, c.seed);

    Timer t;
    w.log("training " + std::to_string(g.parameter_count()) + " parameters on a " +
          std::to_string(prob.grid->z.size()) + " x " + std::to_string(prob.grid->t.size()) + " grid for " +
          std::to_string(c.optimizer.epochs) + " epochs");
    const TrainResult res = train(prob, theta0, train_settings(c, o, w));
    w.timing("train_s", t.seconds());
    write_history(w, res.history);
    const FittedModel model(g, res.theta, {c.seed, c.optimizer.epochs, res.best_loss, to_string(c.kind)});
    w.json("model.json", model_to_json(model));

    // Surface on the training grid.
    Csv surf({"z", "t", "f", "analytic", "abs_error"});
    double max_err = 0.0;
    for (double tt : prob.grid->t) {
        for (double z : prob.grid->z) {
            const double f = model.value(z, tt);
            const double a = tt > c.sde.t0 ? analytic_qf(c.sde, z, tt) : std::numeric_limits<double>::quiet_NaN();
            surf.row({z, tt, f, a, std::abs(f - a)});
            if (std::abs(z) <= 0.95 && !std::isnan(a)) {
                max_err = std::max(max_err, std::abs(f - a));
            }
        }
    }
    w.csv("surface.csv", surf);

    // Quantile slices on a fine z grid.
    Csv sl({"t", "z", "f", "analytic"});
    svg::Panel qp{"quantile slices", "z", "x", {}, {}, false};
    for (double tt : c.histograms.slices) {
        svg::Line lf{"f, t=" + format_double(tt), {}, {}, false}, la{"", {}, {}, true};
        for (double z : linspace(-0.99, 0.99, 199)) {
            const double f = model.value(z, tt);
            const double a = analytic_qf(c.sde, z, tt);
            sl.row({tt, z, f, a});
            lf.x.push_back(z);
            lf.y.push_back(f);
            la.x.push_back(z);
            la.y.push_back(a);
        }
        qp.lines.push_back(lf);
        qp.lines.push_back(la);
    }
    w.csv("quantile_slices.csv", sl);
    w.svg("quantile_slices.svg", svg::render({qp}, 1, "model (solid) and analytic (dashed) quantiles"));

    t = Timer();
    std::vector<SliceData> slices;
    for (std::size_t k = 0; k < c.histograms.slices.size(); ++k) {
        const double tt = c.histograms.slices[k];
        slices.push_back({tt, generated_samples(g, res.theta, tt, c.n_samples, c.seed, k, o.threads), {}, true});
    }
    w.timing("sampling_s", t.seconds());
    t = Timer();
    em_reference(c, c.histograms.slices, c.euler_maruyama.n_paths, c.euler_maruyama.dt, o.threads, slices);
    w.timing("euler_maruyama_s", t.seconds());
    std::vector<svg::Panel> panels(slices.size()), diffs(slices.size());
    std::vector<SliceStats> stats;
    for (std::size_t k = 0; k < slices.size(); ++k) {
        stats.push_back(write_histogram(w, slices[k], c.sde, histogram_range(c), c.histograms.bins, &panels[k],
                                        &diffs[k], "QQM", "Euler-Maruyama"));
    }
    w.svg("hist.svg", svg::render(panels, 3, "QQM vs Euler-Maruyama"));
    w.svg("hist_diff.svg", svg::render(diffs, 3, "bin difference QQM - Euler-Maruyama"));
    write_samples(w, slices);

    w.metrics["parameters"] = g.parameter_count();
    w.metrics["best_loss"] = res.best_loss;
    w.metrics["best_epoch"] = res.best_epoch;
    w.metrics["max_abs_error"] = max_err;
    slice_metrics(w.metrics, slices, stats);
}

void run_sample(const ExperimentConfig& c, const RunOptions& o, RunWriter& w) {
    const FittedModel model = load_model(c.model.string());
    const bool analytic = c.snapshot.contains("sde");
    const auto range = c.histograms.range ? *c.histograms.range : default_histogram_range(c.sde);
    std::vector<SliceData> slices;
    Timer t;
    for (std::size_t k = 0; k < c.histograms.slices.size(); ++k) {
        const double tt = c.histograms.slices[k];
        slices.push_back({tt,
                          generated_samples(model.generator(), model.theta(), tt, c.n_samples, c.seed, k, o.threads),
                          {},
                          analytic && tt > c.sde.t0});
    }
    w.timing("sampling_s", t.seconds());
    std::vector<svg::Panel> panels(slices.size());
    std::vector<SliceStats> stats;
    for (std::size_t k = 0; k < slices.size(); ++k) {
        stats.push_back(write_histogram(w, slices[k], c.sde, range, c.histograms.bins, &panels[k], nullptr, "model", ""));
    }
    w.svg("hist.svg", svg::render(panels, 3, "model samples"));
    write_samples(w, slices);
    w.metrics["model"] = fs::absolute(c.model).lexically_normal().string();
    slice_metrics(w.metrics, slices, stats);
}

/// Normal(mu, sigma) bin masses through the CDF.
std::vector<double> normal_bin_mass(double mu, double sigma, double lo, double hi, std::size_t n) {
    std::vector<double> m(n);
    auto cdf = [&](double x) { return 0.5 * special::erfc(-(x - mu) / (sigma * std::numbers::sqrt2)); };
    const double w = (hi - lo) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = cdf(lo + w * static_cast<double>(i + 1)) - cdf(lo + w * static_cast<double>(i));
    }
    return m;
}

void run_qgan(const ExperimentConfig& c, const RunOptions& o, RunWriter& w) {
    const std::vector<double> data = load_data(c, o, 0.0);
    QganConfig cfg = c.qgan;
    cfg.threads = o.threads;
    Timer t;
    w.log("qGAN: " + std::to_string(cfg.epochs) + " epochs on " + std::to_string(data.size()) + " samples");
    const QganResult r = train_qgan(cfg, data);
    w.timing("train_s", t.seconds());
    for (const auto& warn : r.warnings) {
        w.warnings.push_back(warn);
    }

    Csv hist({"epoch", "loss_d", "loss_g", "loss_g_train", "gap", "ks", "clamped"});
    svg::Line ld{"L_D", {}, {}, false}, lg{"L_G", {}, {}, false}, ln2{"ln 2", {}, {}, true};
    std::size_t fired = 0, clamped = 0;
    for (const auto& h : r.history) {
        hist.row({std::int64_t{h.epoch}, h.loss_d, h.loss_g, h.loss_g_train, h.gap, h.ks,
                  static_cast<std::int64_t>(h.clamped)});
        ld.x.push_back(h.epoch);
        ld.y.push_back(h.loss_d);
        lg.x.push_back(h.epoch);
        lg.y.push_back(h.loss_g);
        fired += std::isnan(h.ks) ? 0 : 1;
        clamped += h.clamped;
    }
    ln2.x = {0.0, static_cast<double>(std::max<std::size_t>(1, r.history.size()) - 1)};
    ln2.y = {std::numbers::ln2, std::numbers::ln2};
    w.csv("history.csv", hist);
    w.svg("loss.svg", svg::render({svg::Panel{"qGAN losses", "epoch", "loss", {}, {ld, lg, ln2}, false}}));

    const Qgan gan(cfg, data);
    const FittedModel gm(gan.generator(), r.theta_g, {c.seed, cfg.epochs, r.best_ks, "qgan_generator"});
    const FittedModel dm(gan.discriminator(), r.theta_d, {c.seed, cfg.epochs, r.best_loss_d, "qgan_discriminator"});
    w.json("generator.json", model_to_json(gm));
    w.json("discriminator.json", model_to_json(dm));

    // Generator curve and its reordering on a mirrored grid.
    std::vector<double> z = linspace(-0.995, 0.995, 200);
    for (std::size_t i = 0; i < z.size() / 2; ++i) {
        z[z.size() - 1 - i] = -z[i];
    }
    std::vector<double> gz;
    for (double v : z) {
        gz.push_back(gan.generate(r.theta_g, v));
    }
    const Reordered ro = reorder_generator(z, gz);
    Csv curve({"z", "g", "q_reordered", "h", "inv"});
    svg::Line lgz{"G(z)", z, gz, false}, lq{"reordered", z, ro.q, false};
    for (std::size_t i = 0; i < z.size(); ++i) {
        curve.row({z[i], gz[i], ro.q[i], ro.map.h_value(i), ro.map.inv_value(i)});
    }
    w.csv("generator_curve.csv", curve);
    w.svg("generator_curve.svg", svg::render({svg::Panel{"generator", "z", "x", {}, {lgz, lq}, false}}));

    const bool normal = c.data.kind == DataSourceConfig::Kind::Normal;
    std::vector<SliceData> slices{{0.0, gan.generator().sample(r.theta_g, 0.0, data.size(),
                                                               derive_seed(derive_seed(c.seed, stream::kSampling), 0),
                                                               o.threads),
                                   data, false}};
    const double lo = c.histograms.range ? c.histograms.range->first : *std::min_element(data.begin(), data.end());
    const double hi = c.histograms.range ? c.histograms.range->second : *std::max_element(data.begin(), data.end());
    std::vector<svg::Panel> panels(1), diffs(1);
    const SliceStats st =
        write_histogram(w, slices[0], c.sde, {lo, hi}, c.histograms.bins, &panels[0], &diffs[0], "qGAN", "data");
    if (normal) {
        svg::Line l{"normal", {}, {}, true};
        const auto m = normal_bin_mass(c.data.mu, c.data.sigma, lo, hi, static_cast<std::size_t>(c.histograms.bins));
        const double bw = (hi - lo) / c.histograms.bins;
        for (std::size_t i = 0; i < m.size(); ++i) {
            l.x.push_back(lo + bw * (static_cast<double>(i) + 0.5));
            l.y.push_back(m[i]);
        }
        panels[0].lines.push_back(l);
    }
    w.svg("hist.svg", svg::render(panels, 1, "qGAN samples vs data"));
    w.svg("hist_diff.svg", svg::render(diffs, 1, "bin difference"));
    write_samples(w, slices);

    w.metrics["snapshot"] = r.snapshot;
    w.metrics["fired"] = fired;
    w.metrics["best_epoch"] = r.best_epoch;
    w.metrics["best_ks"] = r.best_ks;
    w.metrics["best_loss_d"] = r.best_loss_d;
    w.metrics["best_loss_g"] = r.best_loss_g;
    w.metrics["clamped"] = clamped;
    w.metrics["ks_data"] = st.ks_reference;
    w.metrics["max_bin_diff"] = st.max_bin_diff;
}

void run_reorder(const ExperimentConfig& c, const RunOptions&, RunWriter& w) {
    const auto& rc = c.reorder;
    const int n = rc.grid_points;
    std::vector<double> z = linspace(-rc.grid_bound, rc.grid_bound, static_cast<std::size_t>(n));
    // Exact mirror, so that even functions tie bitwise and ties break by grid order.
    for (int i = 0; i < n / 2; ++i) {
        z[static_cast<std::size_t>(n - 1 - i)] = -z[static_cast<std::size_t>(i)];
    }
    std::vector<double> g, dg, d2g;
    const bool dip = rc.source == ReorderConfig::Source::SingleDip;
    if (dip) {
        for (double v : z) {
            const auto q = normal_quantile(rc.mu, rc.sigma, 2.0 * std::abs(v) - 1.0);
            const double s = v < 0.0 ? -2.0 : 2.0;
            g.push_back(q.value);
            dg.push_back(q.dz * s);
            d2g.push_back(q.dzz * 4.0);
        }
    } else {
        const FittedModel m = load_model(rc.model.string());
        for (double v : z) {
            const Jet j = m.jet(v, 0.0);
            g.push_back(j.value);
            dg.push_back(j.dz);
            d2g.push_back(j.dzz);
        }
        w.metrics["model"] = fs::absolute(rc.model).lexically_normal().string();
    }
    const Reordered ro = reorder_generator(z, g);
    const OdeAnalysis a = reordered_ode_analysis(z, g, dg, d2g, ro.map, rc.mu, rc.sigma, rc.flag_factor);

    Csv csv({"z", "g", "dg", "d2g", "q_reordered", "h", "inv", "inv_d1", "inv_d2", "lhs", "rhs", "flagged"});
    ojson flagged_z = ojson::array();
    for (std::size_t i = 0; i < z.size(); ++i) {
        csv.row({z[i], g[i], dg[i], d2g[i], ro.q[i], ro.map.h_value(i), a.inv[i], a.inv_d1[i], a.inv_d2[i], a.lhs[i],
                 a.rhs[i], std::int64_t{a.flagged[i] ? 1 : 0}});
        if (a.flagged[i]) {
            flagged_z.push_back(z[i]);
        }
    }
    w.csv("reorder.csv", csv);

    svg::Line lg{"G(z)", z, g, false}, lq{"reordered", z, ro.q, false}, la{"normal quantile", {}, {}, true};
    svg::Line ll{"LHS", {}, {}, false}, lr{"RHS", {}, {}, true};
    double recovery = 0.0, max_slope = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const auto q = normal_quantile(rc.mu, rc.sigma, z[i]);
        la.x.push_back(z[i]);
        la.y.push_back(q.value);
        recovery = std::max(recovery, std::abs(ro.q[i] - q.value));
        max_slope = std::max(max_slope, q.dz);
        ll.x.push_back(z[i]);
        lr.x.push_back(z[i]);
        const double nan = std::numeric_limits<double>::quiet_NaN();
        ll.y.push_back(a.flagged[i] ? nan : a.lhs[i]);
        lr.y.push_back(a.flagged[i] ? nan : a.rhs[i]);
    }
    w.svg("reorder.svg", svg::render({svg::Panel{"generator and reordering", "z", "x", {}, {lg, lq, la}, false},
                                      svg::Panel{"quantile ODE (flagged points omitted)", "z", "value", {}, {ll, lr}, false}},
                                     2));
    w.metrics["n_flagged"] = a.n_flagged;
    w.metrics["flagged_z"] = flagged_z;
    w.metrics["threshold"] = a.threshold;
    w.metrics["max_abs_diff"] = a.max_abs_diff;
    w.metrics["recovery_max_error"] = recovery;
    w.metrics["recovery_bound"] = 2.0 * (z[1] - z[0]) * max_slope;
}

} // namespace

RunSummary run_experiment(const ExperimentConfig& c, const RunOptions& o) {
    if (o.threads < 1) {
        throw ConfigError("--threads must be >= 1");
    }
    Timer total;
    RunWriter w(c, o);
    w.log("run " + c.name + " (" + to_string(c.kind) + "), seed " + std::to_string(c.seed) + ", output " +
          o.out_dir.string());
    switch (c.kind) {
    case ExperimentKind::TrainInitialQf: run_train_initial(c, o, w); break;
    case ExperimentKind::PropagateAnalytic:
    case ExperimentKind::PropagateData: run_propagate(c, o, w); break;
    case ExperimentKind::Sample: run_sample(c, o, w); break;
    case ExperimentKind::EulerMaruyama: run_euler_maruyama(c, o, w); break;
    case ExperimentKind::QganTrain: run_qgan(c, o, w); break;
    case ExperimentKind::ReorderAnalysis: run_reorder(c, o, w); break;
    }
    for (const auto& warn : w.warnings) {
        w.log("warning: " + warn);
    }
    return w.finish(total.seconds());
}

// ---------------------------------------------------------------------------
// compare

namespace {

struct LoadedManifest {
    fs::path dir;
    nlohmann::json j;
    std::string label;
};

LoadedManifest load_manifest(const fs::path& p) {
    fs::path file = fs::is_directory(p) ? p / kManifestFile : p;
    LoadedManifest m;
    m.dir = file.parent_path();
    try {
        m.j = nlohmann::json::parse(read_file(file));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(file.string() + " is not valid JSON: " + e.what());
    }
    if (!m.j.is_object() || m.j.value("format", "") != "qqm-manifest") {
        throw ConfigError(file.string() + " is not a qqm run manifest");
    }
    const std::string cfg = m.j.value("config_path", "");
    m.label = (cfg.empty() ? m.j.value("name", file.string()) : cfg) + " [" + file.string() + "]";
    return m;
}

std::optional<std::vector<double>> manifest_samples(const LoadedManifest& m, double t) {
    if (!m.j.contains("samples") || m.j["samples"].is_null()) {
        return std::nullopt;
    }
    const auto& s = m.j["samples"];
    for (const auto& c : s.at("columns")) {
        if (c.at("t").get<double>() == t) {
            auto col = read_csv(m.dir / s.at("file").get<std::string>()).column(c.at("column").get<std::string>());
            col.erase(std::remove_if(col.begin(), col.end(), [](double v) { return std::isnan(v); }), col.end());
            return col;
        }
    }
    return std::nullopt;
}

} // namespace

CompareSummary compare_runs(const fs::path& pa, const fs::path& pb, const fs::path& out_dir) {
    const LoadedManifest a = load_manifest(pa), b = load_manifest(pb);
    CompareSummary out;
    out.out_dir = out_dir;
    Csv bins({"t", "bin_lo", "bin_hi", "a", "b", "a_minus_b"});
    Csv summary({"t", "bins", "max_abs_diff", "ks", "ks_method"});
    std::vector<svg::Panel> panels;
    for (const auto& ha : a.j.at("histograms")) {
        const double t = ha.at("t").get<double>();
        const nlohmann::json* hb = nullptr;
        for (const auto& h : b.j.at("histograms")) {
            if (h.at("t").get<double>() == t) {
                hb = &h;
            }
        }
        if (!hb) {
            continue;
        }
        const double lo = ha.at("lo").get<double>(), hi = ha.at("hi").get<double>();
        const auto nb = ha.at("bins").get<std::size_t>();
        if (lo != hb->at("lo").get<double>() || hi != hb->at("hi").get<double>() || nb != hb->at("bins").get<std::size_t>()) {
            throw ConfigError("incompatible histograms at t = " + format_double(t) + ": " + a.label + " bins " +
                              std::to_string(nb) + " over [" + format_double(lo) + ", " + format_double(hi) +
                              "], " + b.label + " bins " + std::to_string(hb->at("bins").get<std::size_t>()) +
                              " over [" + format_double(hb->at("lo").get<double>()) + ", " +
                              format_double(hb->at("hi").get<double>()) + "]");
        }
        const auto ca = read_csv(a.dir / ha.at("file").get<std::string>());
        const auto cb = read_csv(b.dir / hb->at("file").get<std::string>());
        const auto& va = ca.column(ha.at("column").get<std::string>());
        const auto& vb = cb.column(hb->at("column").get<std::string>());
        if (va.size() != nb || vb.size() != nb) {
            throw ConfigError("histogram files at t = " + format_double(t) + " do not match their manifests");
        }
        SliceComparison sc{t, nb, 0.0, 0.0, "binned"};
        std::vector<double> diff(nb);
        double cum_a = 0.0, cum_b = 0.0;
        for (std::size_t i = 0; i < nb; ++i) {
            diff[i] = va[i] - vb[i];
            sc.max_abs_diff = std::max(sc.max_abs_diff, std::abs(diff[i]));
            cum_a += va[i];
            cum_b += vb[i];
            sc.ks = std::max(sc.ks, std::abs(cum_a - cum_b));
            bins.row({t, ca.column("bin_lo")[i], ca.column("bin_hi")[i], va[i], vb[i], diff[i]});
        }
        const auto sa = manifest_samples(a, t), sb = manifest_samples(b, t);
        if (sa && sb && !sa->empty() && !sb->empty()) {
            sc.ks = ks_statistic(*sa, *sb);
            sc.ks_method = "samples";
        }
        summary.row({t, static_cast<std::int64_t>(nb), sc.max_abs_diff, sc.ks, sc.ks_method});
        panels.push_back(svg::Panel{"t = " + format_double(t), "x", "A - B",
                                    {svg::Bars{"difference", lo, (hi - lo) / static_cast<double>(nb), diff}}, {}, false});
        out.slices.push_back(sc);
    }
    if (out.slices.empty()) {
        throw ConfigError("no common histogram slice times between " + a.label + " and " + b.label);
    }

    prepare_output_dir(out_dir);
    write_file_atomic(out_dir / "compare_bins.csv", bins.str());
    write_file_atomic(out_dir / "compare_summary.csv", summary.str());
    write_file_atomic(out_dir / "compare.svg", svg::render(panels, 3, "bin differences A - B"));
    ojson m;
    m["format"] = "qqm-manifest";
    m["version"] = 1;
    m["name"] = out_dir.filename().string();
    m["kind"] = "compare";
    m["inputs"] = {a.label, b.label};
    ojson arts = ojson::array();
    for (const char* f : {"compare.svg", "compare_bins.csv", "compare_summary.csv"}) {
        const auto bytes = read_file(out_dir / f);
        arts.push_back(ojson{{"file", f}, {"bytes", bytes.size()}, {"sha1", git_blob_sha1(bytes)}});
    }
    m["artifacts"] = arts;
    m["histograms"] = ojson::array();
    m["samples"] = nullptr;
    ojson sl = ojson::array();
    double worst = 0.0, worst_ks = 0.0;
    for (const auto& s : out.slices) {
        sl.push_back(ojson{{"t", s.t}, {"max_abs_diff", s.max_abs_diff}, {"ks", s.ks}, {"ks_method", s.ks_method}});
        worst = std::max(worst, s.max_abs_diff);
        worst_ks = std::max(worst_ks, s.ks);
    }
    m["metrics"] = ojson{{"slices", sl}, {"max_abs_diff", worst}, {"max_ks", worst_ks}};
    write_file_atomic(out_dir / kManifestFile, m.dump(2) + "\n");
    return out;
}

} // namespace qqm
