#include "qqm/config.hpp"

#include <cctype>
#include <cmath>
#include <cstring>

#include "qqm/artifacts.hpp"
#include "qqm/errors.hpp"

namespace qqm {

std::string to_string(ExperimentKind k) {
    switch (k) {
    case ExperimentKind::TrainInitialQf: return "train_initial_qf";
    case ExperimentKind::PropagateAnalytic: return "propagate_analytic";
    case ExperimentKind::PropagateData: return "propagate_data";
    case ExperimentKind::Sample: return "sample";
    case ExperimentKind::EulerMaruyama: return "euler_maruyama";
    case ExperimentKind::QganTrain: return "qgan_train";
    case ExperimentKind::ReorderAnalysis: return "reorder_analysis";
    }
    return "?";
}

namespace {

/// A ConfigError that already carries file and line; never relocated.
class LocatedError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

std::string join_path(const std::string& parent, const std::string& key) {
    return parent.empty() ? key : parent + "." + key;
}

std::string parent_path(const std::string& p) {
    const auto pos = p.find_last_of(".[");
    return pos == std::string::npos ? std::string() : p.substr(0, pos);
}

} // namespace

JsonLocator::JsonLocator(const std::string& text) {
    struct Frame {
        bool object = false;
        std::string path;
        std::size_t index = 0;
        std::string key;
        bool expect_key = true;
    };
    std::vector<Frame> stack;
    int line = 1;
    const std::size_t n = text.size();

    auto skip_string = [&](std::size_t& i, std::string* out) {
        // i sits on the opening quote
        for (++i; i < n && text[i] != '"'; ++i) {
            if (text[i] == '\\' && i + 1 < n) {
                ++i;
            }
            if (text[i] == '\n') {
                ++line;
            }
            if (out) {
                *out += text[i];
            }
        }
    };

    for (std::size_t i = 0; i < n; ++i) {
        const char c = text[i];
        if (c == '\n') {
            ++line;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            continue;
        }
        if (c == ':') {
            if (!stack.empty()) {
                stack.back().expect_key = false;
            }
            continue;
        }
        if (c == ',') {
            if (!stack.empty()) {
                if (stack.back().object) {
                    stack.back().expect_key = true;
                } else {
                    ++stack.back().index;
                }
            }
            continue;
        }
        if (c == '}' || c == ']') {
            if (!stack.empty()) {
                stack.pop_back();
            }
            continue;
        }
        if (c == '"' && !stack.empty() && stack.back().object && stack.back().expect_key) {
            std::string key;
            skip_string(i, &key);
            stack.back().key = key;
            continue;
        }
        std::string path;
        if (!stack.empty()) {
            const Frame& f = stack.back();
            path = f.object ? join_path(f.path, f.key) : f.path + "[" + std::to_string(f.index) + "]";
        }
        lines_.emplace(path, line);
        if (c == '{' || c == '[') {
            Frame f;
            f.object = c == '{';
            f.path = path;
            stack.push_back(f);
        } else if (c == '"') {
            skip_string(i, nullptr);
        } else {
            while (i + 1 < n && !std::strchr(",]}: \t\r\n", text[i + 1])) {
                ++i;
            }
        }
    }
}

int JsonLocator::line(const std::string& path) const {
    std::string p = path;
    while (true) {
        const auto it = lines_.find(p);
        if (it != lines_.end()) {
            return it->second;
        }
        if (p.empty()) {
            return 0;
        }
        p = parent_path(p);
    }
}

// ---------------------------------------------------------------------------

void ConfigNode::fail(const std::string& message) const {
    std::string where = *file_;
    const int line = loc_ ? loc_->line(path_) : 0;
    if (line > 0) {
        where += ":" + std::to_string(line);
    }
    throw LocatedError(where + ": " + (path_.empty() ? "" : path_ + ": ") + message);
}

void ConfigNode::fail(const std::string& key, const std::string& message) const {
    ConfigNode(j_, child(key), loc_, file_).fail(message);
}

std::string ConfigNode::child(const std::string& key) const { return join_path(path_, key); }

void ConfigNode::require_object() const {
    if (!j_->is_object()) {
        fail("expected an object");
    }
}

bool ConfigNode::has(const std::string& key) const { return j_->is_object() && j_->contains(key); }

ConfigNode ConfigNode::at(const std::string& key) const {
    require_object();
    if (!j_->contains(key)) {
        fail("missing required key '" + key + "'");
    }
    return ConfigNode(&j_->at(key), child(key), loc_, file_);
}

std::optional<ConfigNode> ConfigNode::find(const std::string& key) const {
    if (!has(key)) {
        return std::nullopt;
    }
    return ConfigNode(&j_->at(key), child(key), loc_, file_);
}

ConfigNode ConfigNode::element(std::size_t i) const {
    return ConfigNode(&j_->at(i), path_ + "[" + std::to_string(i) + "]", loc_, file_);
}

std::size_t ConfigNode::size() const {
    if (!j_->is_array()) {
        fail("expected an array");
    }
    return j_->size();
}

double ConfigNode::as_double() const {
    if (!j_->is_number()) {
        fail("expected a number");
    }
    const double v = j_->get<double>();
    if (!std::isfinite(v)) {
        fail("must be finite");
    }
    return v;
}

std::int64_t ConfigNode::as_int() const {
    if (!j_->is_number_integer()) {
        fail("expected an integer");
    }
    return j_->get<std::int64_t>();
}

std::uint64_t ConfigNode::as_uint() const {
    if (j_->is_number_unsigned()) {
        return j_->get<std::uint64_t>();
    }
    if (j_->is_number_integer() && j_->get<std::int64_t>() >= 0) {
        return static_cast<std::uint64_t>(j_->get<std::int64_t>());
    }
    fail("expected a non-negative integer");
}

bool ConfigNode::as_bool() const {
    if (!j_->is_boolean()) {
        fail("expected true or false");
    }
    return j_->get<bool>();
}

std::string ConfigNode::as_string() const {
    if (!j_->is_string()) {
        fail("expected a string");
    }
    return j_->get<std::string>();
}

std::vector<double> ConfigNode::as_doubles() const {
    std::vector<double> v(size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = element(i).as_double();
    }
    return v;
}

double ConfigNode::number(const std::string& key, double fallback) const {
    const auto n = find(key);
    return n ? n->as_double() : fallback;
}

std::int64_t ConfigNode::integer(const std::string& key, std::int64_t fallback) const {
    const auto n = find(key);
    return n ? n->as_int() : fallback;
}

std::string ConfigNode::string(const std::string& key, const std::string& fallback) const {
    const auto n = find(key);
    return n ? n->as_string() : fallback;
}

bool ConfigNode::boolean(const std::string& key, bool fallback) const {
    const auto n = find(key);
    return n ? n->as_bool() : fallback;
}

void ConfigNode::allow_only(std::initializer_list<std::string> allowed) const {
    require_object();
    for (const auto& [key, value] : j_->items()) {
        bool ok = false;
        for (const auto& a : allowed) {
            ok = ok || a == key;
        }
        if (!ok) {
            std::string list;
            for (const auto& a : allowed) {
                list += (list.empty() ? "" : ", ") + a;
            }
            fail(key, "unknown key (allowed here: " + list + ")");
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

/// Runs `f`, turning an unlocated ConfigError into one located at `n`.
template <typename F>
auto located(const ConfigNode& n, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const LocatedError&) {
        throw;
    } catch (const ConfigError& e) {
        n.fail(e.what());
    }
}

template <typename T>
T in_range(const ConfigNode& n, T v, T lo, T hi, const std::string& what) {
    if (v < lo || v > hi) {
        n.fail(what);
    }
    return v;
}

int int_in(const ConfigNode& n, std::int64_t lo, std::int64_t hi) {
    const auto v = n.as_int();
    if (v < lo || v > hi) {
        n.fail("must be between " + std::to_string(lo) + " and " + std::to_string(hi));
    }
    return static_cast<int>(v);
}

int int_key(const ConfigNode& parent, const std::string& key, int fallback, std::int64_t lo, std::int64_t hi) {
    const auto n = parent.find(key);
    return n ? int_in(*n, lo, hi) : fallback;
}

double positive(const ConfigNode& n) {
    const double v = n.as_double();
    if (!(v > 0.0)) {
        n.fail("must be > 0");
    }
    return v;
}

double positive_key(const ConfigNode& parent, const std::string& key, double fallback) {
    const auto n = parent.find(key);
    return n ? positive(*n) : fallback;
}

std::filesystem::path existing_file(const ConfigNode& n, const std::filesystem::path& base) {
    std::filesystem::path p = n.as_string();
    if (p.is_relative()) {
        p = base / p;
    }
    if (!std::filesystem::is_regular_file(p)) {
        n.fail("file not found: " + p.string());
    }
    return p;
}

SdeParams parse_sde(const ConfigNode& n) {
    n.allow_only({"nu", "mu", "sigma", "x0", "t0"});
    SdeParams p;
    p.nu = positive(n.at("nu"));
    p.mu = n.number("mu", 0.0);
    p.sigma = n.number("sigma");
    if (p.sigma < 0.0) {
        n.fail("sigma", "must be >= 0");
    }
    p.x0 = n.number("x0");
    p.t0 = n.number("t0");
    located(n, [&] { p.validate(); });
    return p;
}

FeatureMapSpec parse_map(const ConfigNode& n, Variable v) {
    n.allow_only({"kind", "axis"});
    FeatureMapSpec m;
    m.variable = v;
    const auto kind = n.at("kind");
    m.kind = located(kind, [&] { return feature_map_kind_from_string(kind.as_string()); });
    const auto axis = n.at("axis");
    m.axis = located(axis, [&] { return pauli_from_string(axis.as_string()); });
    return m;
}

enum class TimeMap { Required, Forbidden };

GeneratorConfig parse_generator(const ConfigNode& n, const GeneratorSpec& defaults, TimeMap time_map,
                                bool allow_fit) {
    n.allow_only({"n_qubits", "depth", "layout", "z_map", "t_map", "readout", "init"});
    GeneratorConfig g;
    g.spec = defaults;
    g.spec.n_qubits = int_key(n, "n_qubits", defaults.n_qubits, 1, 16);
    g.spec.depth = int_key(n, "depth", defaults.depth, 0, 64);
    if (const auto l = n.find("layout")) {
        const auto s = l->as_string();
        if (s == "main_text") {
            g.spec.layout = Layout::MainText;
        } else if (s == "sandwich") {
            g.spec.layout = Layout::Sandwich;
        } else {
            l->fail("must be main_text or sandwich");
        }
    }
    if (const auto m = n.find("z_map")) {
        g.spec.z_map = parse_map(*m, Variable::Z);
    }
    if (const auto m = n.find("t_map")) {
        if (time_map == TimeMap::Forbidden) {
            m->fail("this experiment kind uses a fixed-time circuit; remove t_map");
        }
        g.spec.t_map = parse_map(*m, Variable::T);
    } else if (time_map == TimeMap::Required) {
        n.fail("missing required key 't_map'");
    }
    if (const auto r = n.find("readout")) {
        r->allow_only({"kind", "alpha", "qubit"});
        const auto kind = r->string("kind");
        if (kind == "total_z") {
            g.spec.costs = {CostOperator::total_z(g.spec.n_qubits, r->number("alpha", 1.0))};
            if (r->has("qubit")) {
                r->fail("qubit", "only used by single_z");
            }
        } else if (kind == "single_z") {
            const int q = int_key(*r, "qubit", 0, 0, g.spec.n_qubits - 1);
            g.spec.costs = {CostOperator::single_z(q, r->number("alpha", 1.0))};
        } else if (kind == "classical_fit") {
            if (!allow_fit) {
                r->fail("kind", "classical_fit is only available for train_initial_qf");
            }
            if (r->has("alpha") || r->has("qubit")) {
                r->fail("classical_fit sets its own readout weights; remove alpha and qubit");
            }
            g.classical_fit = true;
            g.spec.costs.clear();
        } else {
            r->fail("kind", "must be total_z, single_z or classical_fit");
        }
    } else {
        g.spec.costs = defaults.costs;
        if (!defaults.costs.empty() && defaults.costs[0].terms.size() == static_cast<std::size_t>(defaults.n_qubits) &&
            g.spec.n_qubits != defaults.n_qubits) {
            g.spec.costs = {CostOperator::total_z(g.spec.n_qubits, defaults.costs[0].global_weight)};
        }
    }
    g.init = n.string("init", g.spec.layout == Layout::Sandwich ? "identity" : "uniform");
    if (g.init != "identity" && g.init != "uniform") {
        n.fail("init", "must be identity or uniform");
    }
    if (g.init == "identity" && g.spec.layout != Layout::Sandwich) {
        n.fail("init", "identity initialization needs the sandwich layout");
    }
    if (g.classical_fit && g.spec.layout != Layout::Sandwich) {
        n.fail("layout", "classical_fit needs the sandwich layout");
    }
    if (!g.classical_fit) {
        located(n, [&] { g.spec.validate(); });
    }
    return g;
}

GridAxis parse_axis(const ConfigNode& n, GridAxis fallback) {
    n.allow_only({"from", "to", "n"});
    GridAxis a;
    a.from = n.number("from", fallback.from);
    a.to = n.number("to", fallback.to);
    a.n = int_key(n, "n", fallback.n, 1, 100000);
    if (a.n > 1 && !(a.from < a.to)) {
        n.fail("from must be < to");
    }
    if (a.n == 1 && a.from != a.to) {
        n.fail("a single-point axis needs from == to");
    }
    return a;
}

AdamSettings parse_adam(const ConfigNode& n, AdamSettings a) {
    a.learning_rate = positive_key(n, "learning_rate", a.learning_rate);
    if (const auto b = n.find("beta1")) {
        a.beta1 = in_range(*b, b->as_double(), 0.0, 0.999999, "must be in [0, 1)");
    }
    if (const auto b = n.find("beta2")) {
        a.beta2 = in_range(*b, b->as_double(), 0.0, 0.999999999, "must be in [0, 1)");
    }
    a.epsilon = positive_key(n, "epsilon", a.epsilon);
    return a;
}

OptimizerConfig parse_optimizer(const ConfigNode& n, OptimizerConfig o) {
    n.allow_only({"epochs", "learning_rate", "beta1", "beta2", "epsilon", "checkpoint_every"});
    o.epochs = int_key(n, "epochs", o.epochs, 1, 10000000);
    o.adam = parse_adam(n, o.adam);
    o.checkpoint_every = int_key(n, "checkpoint_every", o.checkpoint_every, 0, 10000000);
    return o;
}

HistogramConfig parse_histograms(const ConfigNode& n, HistogramConfig h, bool slices_allowed, double t_min) {
    if (slices_allowed) {
        n.allow_only({"slices", "bins", "range"});
    } else {
        n.allow_only({"bins", "range"});
    }
    if (const auto s = n.find("slices")) {
        h.slices = s->as_doubles();
        if (h.slices.empty()) {
            s->fail("needs at least one time");
        }
        for (std::size_t i = 0; i < h.slices.size(); ++i) {
            if (!(h.slices[i] > t_min) && !(t_min == -INFINITY)) {
                s->element(i).fail("slice times must be after the process start t0");
            }
            if (i && !(h.slices[i] > h.slices[i - 1])) {
                s->element(i).fail("slice times must be strictly increasing");
            }
        }
    }
    h.bins = int_key(n, "bins", h.bins, 1, 100000);
    if (const auto r = n.find("range")) {
        const auto v = r->as_doubles();
        if (v.size() != 2 || !(v[0] < v[1])) {
            r->fail("must be [lo, hi] with lo < hi");
        }
        h.range = std::make_pair(v[0], v[1]);
    }
    return h;
}

std::size_t count_key(const ConfigNode& parent, const std::string& key, std::size_t fallback) {
    const auto n = parent.find(key);
    if (!n) {
        return fallback;
    }
    const auto v = n->as_int();
    if (v < 1 || v > 100000000) {
        n->fail("must be between 1 and 100000000");
    }
    return static_cast<std::size_t>(v);
}

DataSourceConfig parse_data(const ConfigNode& n, const std::filesystem::path& base, bool allow_em) {
    const auto source = n.string("source");
    DataSourceConfig d;
    if (source == "euler_maruyama") {
        if (!allow_em) {
            n.fail("source", "euler_maruyama data needs an sde section; use normal or csv");
        }
        n.allow_only({"source", "n", "dt"});
        d.kind = DataSourceConfig::Kind::EulerMaruyama;
        d.n = count_key(n, "n", d.n);
        d.dt = positive_key(n, "dt", d.dt);
    } else if (source == "normal") {
        n.allow_only({"source", "n", "mu", "sigma"});
        d.kind = DataSourceConfig::Kind::Normal;
        d.n = count_key(n, "n", 10000);
        d.mu = n.number("mu");
        d.sigma = positive(n.at("sigma"));
    } else if (source == "csv") {
        n.allow_only({"source", "path", "column"});
        d.kind = DataSourceConfig::Kind::Csv;
        d.path = existing_file(n.at("path"), base);
        d.column = n.string("column", "");
    } else {
        n.fail("source", allow_em ? "must be euler_maruyama, normal or csv" : "must be normal or csv");
    }
    return d;
}

ExperimentKind parse_kind(const ConfigNode& n) {
    const auto s = n.as_string();
    for (auto k : {ExperimentKind::TrainInitialQf, ExperimentKind::PropagateAnalytic, ExperimentKind::PropagateData,
                   ExperimentKind::Sample, ExperimentKind::EulerMaruyama, ExperimentKind::QganTrain,
                   ExperimentKind::ReorderAnalysis}) {
        if (to_string(k) == s) {
            return k;
        }
    }
    n.fail("unknown experiment kind '" + s +
           "' (expected train_initial_qf, propagate_analytic, propagate_data, sample, euler_maruyama, qgan_train "
           "or reorder_analysis)");
}

} // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& label, const std::filesystem::path& base,
                              std::optional<std::uint64_t> seed_override) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // byte offset -> line
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
        throw LocatedError(label + ":" + std::to_string(line) + ": invalid JSON: " + e.what());
    }
    const JsonLocator loc(text);
    const ConfigNode root(&doc, "", &loc, &label);
    root.require_object();

    ExperimentConfig c;
    c.snapshot = nlohmann::ordered_json::parse(text);
    c.schema = static_cast<int>(root.integer("schema"));
    if (c.schema != kConfigSchema) {
        root.at("schema").fail("unsupported schema version " + std::to_string(c.schema) + " (this build reads " +
                               std::to_string(kConfigSchema) + ")");
    }
    c.kind = parse_kind(root.at("kind"));
    c.name = root.string("name", "");
    if (c.name.empty()) {
        const auto stem = std::filesystem::path(label).stem().string();
        c.name = stem.empty() ? to_string(c.kind) : stem;
    }
    if (c.name.find_first_of("/\\") != std::string::npos || c.name == "." || c.name == "..") {
        root.fail("name", "must be a plain directory name");
    }
    if (const auto s = root.find("seed")) {
        c.seed = s->as_uint();
    }
    if (seed_override) {
        c.seed = *seed_override;
        c.snapshot["seed"] = c.seed;
    }

    const std::initializer_list<std::string> common{"schema", "kind", "name", "seed"};
    auto allow = [&](std::initializer_list<std::string> extra) {
        std::vector<std::string> all(common);
        all.insert(all.end(), extra.begin(), extra.end());
        for (const auto& [key, value] : doc.items()) {
            if (std::find(all.begin(), all.end(), key) == all.end()) {
                std::string list;
                for (const auto& a : extra) {
                    list += (list.empty() ? "" : ", ") + a;
                }
                root.fail(key, "not used by kind " + to_string(c.kind) + " (sections here: " + list + ")");
            }
        }
    };

    const double no_t0 = -INFINITY;
    switch (c.kind) {
    case ExperimentKind::TrainInitialQf: {
        allow({"sde", "generator", "data", "targets", "optimizer", "sampling", "histograms"});
        c.sde = parse_sde(root.at("sde"));
        c.generator = parse_generator(root.at("generator"), GeneratorSpec{}, TimeMap::Forbidden, true);
        if (const auto t = root.find("targets")) {
            t->allow_only({"points", "time"});
            c.target_points = int_key(*t, "points", c.target_points, 2, 100000);
            c.target_time = t->number("time", c.target_time);
        }
        if (!(c.target_time > c.sde.t0)) {
            root.fail("targets", "time must be after the process start t0");
        }
        c.data = root.has("data") ? parse_data(root.at("data"), base, true) : DataSourceConfig{};
        c.optimizer.adam.learning_rate = 0.005;
        if (const auto o = root.find("optimizer")) {
            c.optimizer = parse_optimizer(*o, c.optimizer);
        }
        if (const auto s = root.find("sampling")) {
            s->allow_only({"n_samples"});
            c.n_samples = count_key(*s, "n_samples", c.n_samples);
        }
        c.histograms.slices = {c.target_time};
        if (const auto h = root.find("histograms")) {
            c.histograms = parse_histograms(*h, c.histograms, false, no_t0);
        }
        break;
    }
    case ExperimentKind::PropagateAnalytic:
    case ExperimentKind::PropagateData: {
        if (c.kind == ExperimentKind::PropagateData) {
            allow({"sde", "generator", "initial_model", "boundary", "grid", "loss", "optimizer", "sampling",
                   "histograms", "euler_maruyama"});
            c.model = existing_file(root.at("initial_model"), base);
        } else {
            allow({"sde", "generator", "boundary", "grid", "loss", "optimizer", "sampling", "histograms",
                   "euler_maruyama"});
        }
        c.sde = parse_sde(root.at("sde"));
        GeneratorSpec def;
        def.z_map = {FeatureMapKind::Product, Pauli::X, Variable::Z};
        def.costs = {CostOperator::total_z(def.n_qubits, 0.5)};
        c.generator = parse_generator(root.at("generator"), def, TimeMap::Required, false);
        if (const auto b = root.find("boundary")) {
            b->allow_only({"kind", "time", "pin_weight", "pin_points"});
            const auto kind = b->string("kind", "floating");
            if (kind == "floating") {
                c.boundary = BoundaryKind::Floating;
                if (b->has("pin_points") || b->has("pin_weight")) {
                    b->fail("pin_points and pin_weight apply to the pinned boundary only");
                }
            } else if (kind == "pinned") {
                c.boundary = BoundaryKind::Pinned;
            } else {
                b->fail("kind", "must be floating or pinned");
            }
            c.boundary_time = b->number("time", c.boundary_time);
            c.pin_weight = b->number("pin_weight", c.pin_weight);
            if (c.pin_weight < 0.0) {
                b->fail("pin_weight", "must be >= 0");
            }
            if (const auto p = b->find("pin_points")) {
                c.pin_points = p->as_doubles();
                for (std::size_t i = 0; i < c.pin_points.size(); ++i) {
                    if (!(std::abs(c.pin_points[i]) < 1.0 - kDomainMargin)) {
                        p->element(i).fail("pin points must satisfy |z| < 1");
                    }
                }
            }
        }
        if (c.boundary == BoundaryKind::Pinned && c.pin_points.empty()) {
            c.pin_points = linspace(-0.95, 0.95, 21);
        }
        if (c.kind == ExperimentKind::PropagateAnalytic && !(c.boundary_time > c.sde.t0)) {
            root.fail("boundary", "time must be after the process start t0 (the analytic profile is a delta at t0)");
        }
        if (const auto g = root.find("grid")) {
            g->allow_only({"z", "t"});
            if (const auto z = g->find("z")) {
                c.grid_z = parse_axis(*z, c.grid_z);
                if (!(std::abs(c.grid_z.from) < 1.0 - kDomainMargin && std::abs(c.grid_z.to) < 1.0 - kDomainMargin)) {
                    z->fail("z must stay inside |z| < 1 (derivatives of the arcsine encodings diverge at the ends)");
                }
            }
            if (const auto t = g->find("t")) {
                c.grid_t = parse_axis(*t, c.grid_t);
            }
        }
        c.loss.data_weight = 0.0;
        if (const auto l = root.find("loss")) {
            l->allow_only({"sde_weight", "eps_slope"});
            c.loss.sde_weight = positive_key(*l, "sde_weight", c.loss.sde_weight);
            c.loss.eps_slope = positive_key(*l, "eps_slope", c.loss.eps_slope);
        }
        c.optimizer.epochs = 200;
        c.optimizer.adam.learning_rate = 0.01;
        if (const auto o = root.find("optimizer")) {
            c.optimizer = parse_optimizer(*o, c.optimizer);
        }
        if (const auto s = root.find("sampling")) {
            s->allow_only({"n_samples"});
            c.n_samples = count_key(*s, "n_samples", c.n_samples);
        }
        if (const auto h = root.find("histograms")) {
            c.histograms = parse_histograms(*h, c.histograms, true, c.sde.t0);
        }
        if (const auto e = root.find("euler_maruyama")) {
            e->allow_only({"dt", "n_paths"});
            c.euler_maruyama.dt = positive_key(*e, "dt", c.euler_maruyama.dt);
            c.euler_maruyama.n_paths = count_key(*e, "n_paths", c.euler_maruyama.n_paths);
        }
        break;
    }
    case ExperimentKind::Sample: {
        allow({"model", "sde", "sampling", "histograms"});
        c.model = existing_file(root.at("model"), base);
        const bool with_sde = root.has("sde");
        if (with_sde) {
            c.sde = parse_sde(root.at("sde"));
        }
        if (const auto s = root.find("sampling")) {
            s->allow_only({"n_samples"});
            c.n_samples = count_key(*s, "n_samples", c.n_samples);
        }
        if (const auto h = root.find("histograms")) {
            c.histograms = parse_histograms(*h, c.histograms, true, with_sde ? c.sde.t0 : no_t0);
            if (!with_sde && !c.histograms.range) {
                h->fail("needs an explicit range when there is no sde section");
            }
        } else if (!with_sde) {
            root.fail("a sample run without an sde section needs histograms.range");
        }
        break;
    }
    case ExperimentKind::EulerMaruyama: {
        allow({"sde", "euler_maruyama", "histograms"});
        c.sde = parse_sde(root.at("sde"));
        if (const auto e = root.find("euler_maruyama")) {
            e->allow_only({"dt", "n_paths"});
            c.euler_maruyama.dt = positive_key(*e, "dt", c.euler_maruyama.dt);
            c.euler_maruyama.n_paths = count_key(*e, "n_paths", c.euler_maruyama.n_paths);
        }
        if (const auto h = root.find("histograms")) {
            c.histograms = parse_histograms(*h, c.histograms, true, c.sde.t0);
        }
        if (!(c.histograms.slices.front() > c.sde.t0)) {
            root.fail("histograms", "slice times must be after the process start t0");
        }
        break;
    }
    case ExperimentKind::QganTrain: {
        allow({"data", "generator", "discriminator", "qgan", "histograms"});
        c.data = parse_data(root.at("data"), base, false);
        c.qgan = QganConfig::defaults();
        if (const auto g = root.find("generator")) {
            c.generator = parse_generator(*g, c.qgan.generator, TimeMap::Forbidden, false);
            c.qgan.generator = c.generator.spec;
        } else {
            c.generator.spec = c.qgan.generator;
        }
        if (const auto d = root.find("discriminator")) {
            c.discriminator = parse_generator(*d, c.qgan.discriminator, TimeMap::Forbidden, false);
            c.qgan.discriminator = c.discriminator.spec;
        } else {
            c.discriminator.spec = c.qgan.discriminator;
        }
        if (const auto q = root.find("qgan")) {
            q->allow_only({"epochs", "epsilon", "batch_real", "batch_fake", "ks_samples", "saturating",
                           "optimizer_generator", "optimizer_discriminator"});
            c.qgan.epochs = int_key(*q, "epochs", c.qgan.epochs, 1, 10000000);
            if (const auto e = q->find("epsilon")) {
                c.qgan.epsilon = in_range(*e, e->as_double(), 0.0, 1e9, "must be >= 0");
            }
            c.qgan.batch_real = int_key(*q, "batch_real", c.qgan.batch_real, 1, 1000000);
            c.qgan.batch_fake = int_key(*q, "batch_fake", c.qgan.batch_fake, 1, 1000000);
            c.qgan.ks_samples = int_key(*q, "ks_samples", c.qgan.ks_samples, 1, 10000000);
            c.qgan.saturating = q->boolean("saturating", c.qgan.saturating);
            for (const char* key : {"optimizer_generator", "optimizer_discriminator"}) {
                if (const auto o = q->find(key)) {
                    o->allow_only({"learning_rate", "beta1", "beta2", "epsilon"});
                    auto& a = std::string(key) == "optimizer_generator" ? c.qgan.adam_generator
                                                                        : c.qgan.adam_discriminator;
                    a = parse_adam(*o, a);
                }
            }
        }
        c.qgan.seed = c.seed;
        located(root, [&] { c.qgan.validate(); });
        c.histograms.slices = {0.0};
        if (const auto h = root.find("histograms")) {
            c.histograms = parse_histograms(*h, c.histograms, false, no_t0);
        }
        break;
    }
    case ExperimentKind::ReorderAnalysis: {
        allow({"reorder"});
        if (const auto r = root.find("reorder")) {
            r->allow_only({"source", "model", "grid_points", "grid_bound", "mu", "sigma", "flag_factor"});
            const auto src = r->string("source", "single_dip");
            if (src == "single_dip") {
                c.reorder.source = ReorderConfig::Source::SingleDip;
                if (r->has("model")) {
                    r->fail("model", "only used with source = model");
                }
            } else if (src == "model") {
                c.reorder.source = ReorderConfig::Source::Model;
                c.reorder.model = existing_file(r->at("model"), base);
            } else {
                r->fail("source", "must be single_dip or model");
            }
            c.reorder.grid_points = int_key(*r, "grid_points", c.reorder.grid_points, 11, 10000000);
            if (const auto b = r->find("grid_bound")) {
                c.reorder.grid_bound = b->as_double();
                if (!(c.reorder.grid_bound > 0.0 && c.reorder.grid_bound < 1.0)) {
                    b->fail("must be in (0, 1)");
                }
            }
            c.reorder.mu = r->number("mu", c.reorder.mu);
            c.reorder.sigma = positive_key(*r, "sigma", c.reorder.sigma);
            c.reorder.flag_factor = positive_key(*r, "flag_factor", c.reorder.flag_factor);
        }
        break;
    }
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
    if (!std::filesystem::is_regular_file(path)) {
        throw ConfigError("config file not found: " + path.string());
    }
    ExperimentConfig c = parse_config(read_file(path), path.string(), path.parent_path(), seed_override);
    c.source = path;
    return c;
}

} // namespace qqm
